"""Shared generators and independent oracles used across the test suite."""

import math

import numpy as np

from ttvae.pianoroll import (
    BASS_ONSET_COL,
    BASS_PITCH_START,
    BASS_REST_COL,
    MELODY_LOW,
    MELODY_ONSET_COL,
    MELODY_REST_COL,
    N_STEPS,
    NoteEvent,
    TrackPair,
    encode_roll,
)

RISE = math.sqrt(2.0 / 15.0)
FIFTHS = (0, -5, 2, -3, 4, -1, 6, 1, -4, 3, -2, 5)


def random_track(rng, low, high, rest_prob=0.25, max_len=8):
    """Random monophonic quantized track covering 64 steps."""
    notes = []
    step = 0
    while step < N_STEPS:
        length = int(rng.integers(1, max_len + 1))
        length = min(length, N_STEPS - step)
        if rng.random() > rest_prob:
            pitch = int(rng.integers(low, high + 1))
            notes.append(NoteEvent(pitch, step, length))
        step += length
    return notes


def random_window(rng, bass_low=36, bass_high=47):
    """Random in-range 4-bar window (melody 24..96, bass decodable octave)."""
    return TrackPair(
        melody=random_track(rng, MELODY_LOW, 96),
        bass=random_track(rng, bass_low, bass_high, rest_prob=0.2),
    )


def random_roll(rng):
    return encode_roll(random_window(rng))


def _point(pc):
    k = FIFTHS[pc]
    return (math.sin(k * math.pi / 2.0), math.cos(k * math.pi / 2.0), k * RISE)


def brute_force_tension(roll, key_point, window=4):
    """Reference tension curves: explicit loops, no shared code with ttvae.

    Per step, gathers the sounding melody/bass pitch classes straight from
    the roll columns, enumerates pairs for the diameter, averages points for
    the center of effect, then applies a truncated centered windowed mean.
    """
    raw_strain = [0.0] * N_STEPS
    raw_diam = [0.0] * N_STEPS
    for t in range(N_STEPS):
        pcs = []
        mcol = max(range(MELODY_REST_COL + 1), key=lambda c: roll[t, c])
        if roll[t, mcol] and mcol != MELODY_REST_COL:
            pcs.append((mcol + MELODY_LOW) % 12)
        bcol = max(range(BASS_PITCH_START, BASS_REST_COL + 1),
                   key=lambda c: roll[t, c])
        if roll[t, bcol] and bcol != BASS_REST_COL:
            pcs.append(bcol - BASS_PITCH_START)
        if not pcs:
            continue
        pts = [_point(pc) for pc in pcs]
        best = 0.0
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                best = max(best, math.dist(pts[i], pts[j]))
        raw_diam[t] = best
        cx = sum(p[0] for p in pts) / len(pts)
        cy = sum(p[1] for p in pts) / len(pts)
        cz = sum(p[2] for p in pts) / len(pts)
        raw_strain[t] = math.dist((cx, cy, cz), tuple(key_point))

    def smooth(values):
        out = []
        for i in range(N_STEPS):
            lo = max(i - window // 2, 0)
            hi = min(i + (window + 1) // 2, N_STEPS)
            out.append(sum(values[lo:hi]) / (hi - lo))
        return out

    return np.array(smooth(raw_strain)), np.array(smooth(raw_diam))


def onset_steps(roll, track="melody"):
    col = MELODY_ONSET_COL if track == "melody" else BASS_ONSET_COL
    return {t for t in range(N_STEPS) if roll[t, col]}

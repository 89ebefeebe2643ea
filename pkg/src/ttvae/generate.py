"""Seeded generation: decode a latent code, apply edits, render MIDI.

A seed latent comes either from sampling the prior or from encoding the
first valid 4-bar fragment of a seed MIDI file (posterior mean).  Edits are
named attribute vectors with scales, applied additively in order.  Every
generated MIDI is accompanied by a tension report carrying the model's
predicted curves and the curves recomputed from the decoded rolls, for both
the unedited and edited versions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import song_fragments
from .errors import InvalidInputError
from .evaluation import roll_from_output
from .latent import VectorsFile, apply_vector
from .midi import MidiNote, MidiTrack, Score, parse_midi, write_midi
from .pianoroll import BARS_PER_FRAGMENT, TrackPair, decode_roll
from .spiral import SpiralConfig, key_center
from .tension import tension_curves
from .vae.network import TensionVae, sample_latent

OUTPUT_BPM = 120.0
OUTPUT_VELOCITY = 80


@dataclass
class GenerationRequest:
    """Seed selection plus an ordered list of (vector name, scale) edits."""

    sample_seed: int | None = None
    seed_midi: Path | None = None
    fragment_index: int = 0
    edits: list[tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if (self.sample_seed is None) == (self.seed_midi is None):
            raise InvalidInputError(
                "exactly one of sample_seed or seed_midi must be given")


@dataclass
class ChainSection:
    bars: int
    edits: list[tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.bars < 4 or self.bars % 4:
            raise InvalidInputError(
                f"section length must be a positive multiple of 4 bars, "
                f"got {self.bars}")


@dataclass
class ChainPlan:
    sections: list[ChainSection]

    def __post_init__(self):
        if not self.sections:
            raise InvalidInputError("chain plan needs at least one section")

    @classmethod
    def from_dict(cls, data: dict) -> "ChainPlan":
        try:
            sections = [ChainSection(bars=int(s["bars"]),
                                     edits=[(str(n), float(a))
                                            for n, a in s.get("edits", [])])
                        for s in data["sections"]]
        except (KeyError, TypeError, ValueError) as err:
            raise InvalidInputError(f"malformed chain plan: {err}") from err
        return cls(sections=sections)

    def total_bars(self) -> int:
        return sum(s.bars for s in self.sections)


def check_compatibility(model: TensionVae, vectors: VectorsFile,
                        checkpoint_id: str = "") -> None:
    """Refuse vector files that were built against a different model."""
    problems = []
    if vectors.latent_dim != model.cfg.latent_dim:
        problems.append(f"latent_dim {vectors.latent_dim} != model "
                        f"{model.cfg.latent_dim}")
    if vectors.checkpoint_id and checkpoint_id \
            and vectors.checkpoint_id != checkpoint_id:
        problems.append(f"checkpoint id {vectors.checkpoint_id!r} != "
                        f"model {checkpoint_id!r}")
    if problems:
        raise InvalidInputError(
            "vectors file is incompatible with this model: "
            + "; ".join(problems))


def seed_latent(model: TensionVae, request: GenerationRequest) -> tuple[np.ndarray, dict]:
    """Resolve the request's seed to a latent code plus provenance info."""
    if request.sample_seed is not None:
        z = sample_latent(1, model.cfg.latent_dim,
                          request.sample_seed)[0].astype(model.dtype)
        return z, {"kind": "sampled", "rng_seed": request.sample_seed}
    score = parse_midi(Path(request.seed_midi).read_bytes())
    fragments, _, _ = song_fragments(score)
    if not fragments:
        raise InvalidInputError(
            f"{request.seed_midi} yields no valid 4-bar fragment")
    if not 0 <= request.fragment_index < len(fragments):
        raise InvalidInputError(
            f"fragment index {request.fragment_index} out of range "
            f"(file has {len(fragments)} fragments)")
    fragment = fragments[request.fragment_index]
    z = model.encode(fragment.roll).mu
    return z, {"kind": "seed_midi", "path": str(request.seed_midi),
               "fragment_index": request.fragment_index,
               "bar_offset": fragment.bar_offset}


def apply_edits(z: np.ndarray, vectors: VectorsFile,
                edits: list[tuple[str, float]]) -> np.ndarray:
    for name, scale in edits:
        z = apply_vector(z, vectors.get(name), scale)
    return z


def pair_to_score(pair: TrackPair, markers: list[tuple[float, str]] | None = None,
                  ) -> Score:
    """Render a (possibly multi-fragment) track pair at 120 BPM, 4/4."""
    def notes(events):
        return [MidiNote(n.pitch, n.onset / 4.0, n.duration / 4.0,
                         OUTPUT_VELOCITY) for n in events]

    return Score(
        tracks=[MidiTrack(name="melody", channel=0, notes=notes(pair.melody)),
                MidiTrack(name="bass", channel=1, notes=notes(pair.bass))],
        tempos=[(0.0, OUTPUT_BPM)],
        meters=[(0.0, 4, 4)],
        markers=list(markers or []),
    )


def _curve_report(roll: np.ndarray, out, spiral_cfg: SpiralConfig) -> dict:
    strain, diameter = tension_curves(roll, key_center(0, spiral_cfg), spiral_cfg)
    def listed(values):
        return [round(float(v), 6) for v in values]
    return {
        "predicted_tensile": listed(out.tensile),
        "predicted_diameter": listed(out.diameter),
        "recomputed_tensile": listed(strain.values),
        "recomputed_diameter": listed(diameter.values),
    }


@dataclass
class GenerationResult:
    midi_bytes: bytes
    report: dict
    roll: np.ndarray


def generate(model: TensionVae, vectors: VectorsFile,
             request: GenerationRequest, checkpoint_id: str = "",
             spiral_cfg: SpiralConfig = SpiralConfig()) -> GenerationResult:
    """Decode the edited seed into a 4-bar MIDI plus tension report."""
    check_compatibility(model, vectors, checkpoint_id)
    z, seed_info = seed_latent(model, request)
    out_original = model.decode(z)
    roll_original = roll_from_output(out_original)
    z_edited = apply_edits(z, vectors, request.edits)
    out_edited = model.decode(z_edited)
    roll_edited = roll_from_output(out_edited)

    pair = decode_roll(roll_edited)
    report = {
        "seed": seed_info,
        "edits": [[name, float(scale)] for name, scale in request.edits],
        "checkpoint_id": checkpoint_id,
        "original": _curve_report(roll_original, out_original, spiral_cfg),
        "modified": _curve_report(roll_edited, out_edited, spiral_cfg),
    }
    return GenerationResult(midi_bytes=write_midi(pair_to_score(pair)),
                            report=report, roll=roll_edited)


def compose_chain(model: TensionVae, vectors: VectorsFile, plan: ChainPlan,
                  request: GenerationRequest, checkpoint_id: str = "",
                  spiral_cfg: SpiralConfig = SpiralConfig()) -> GenerationResult:
    """Concatenate 4-bar blocks decoded from cumulatively edited seeds.

    Every section re-edits the previous section's latent (edits accumulate),
    and all blocks within a section decode the same latent.  Section starts
    carry MIDI markers.
    """
    check_compatibility(model, vectors, checkpoint_id)
    z, seed_info = seed_latent(model, request)
    melody, bass = [], []
    markers = []
    sections_report = []
    bar_cursor = 0
    for number, section in enumerate(plan.sections, start=1):
        z = apply_edits(z, vectors, section.edits)
        out = model.decode(z)
        roll = roll_from_output(out)
        block_pair = decode_roll(roll)
        markers.append((bar_cursor * 4.0, f"section {number}"))
        sections_report.append({
            "section": number,
            "bars": section.bars,
            "edits": [[name, float(scale)] for name, scale in section.edits],
            **_curve_report(roll, out, spiral_cfg),
        })
        for _ in range(section.bars // BARS_PER_FRAGMENT):
            offset = bar_cursor * 16
            melody.extend(type(n)(n.pitch, n.onset + offset, n.duration)
                          for n in block_pair.melody)
            bass.extend(type(n)(n.pitch, n.onset + offset, n.duration)
                        for n in block_pair.bass)
            bar_cursor += BARS_PER_FRAGMENT
    pair = TrackPair(melody=melody, bass=bass)
    report = {
        "seed": seed_info,
        "checkpoint_id": checkpoint_id,
        "total_bars": plan.total_bars(),
        "sections": sections_report,
    }
    return GenerationResult(
        midi_bytes=write_midi(pair_to_score(pair, markers)),
        report=report, roll=np.zeros(0, dtype=np.uint8))

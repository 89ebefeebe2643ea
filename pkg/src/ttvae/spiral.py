"""Spiral-array pitch geometry and per-cloud tonal tension measures.

Pitch classes sit on a 3-D helix indexed by the line of fifths: one quarter
turn and a fixed vertical rise per fifth.  Tonal closeness then maps to
Euclidean closeness, which gives two per-window tension measures:

* cloud diameter -- largest pairwise distance among the sounding pitches
  (dissonance within the window);
* tensile strain -- distance between the cloud's weighted centroid (center
  of effect) and the key's center (tension against the tonal context).

Calibration defaults (radius 1, rise sqrt(2/15), chord/key weights) follow
the established spiral-array literature and are tunable via
:class:`SpiralConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, UnsupportedModeError

DEFAULT_RISE = math.sqrt(2.0 / 15.0)
DEFAULT_CHORD_WEIGHTS = (0.536, 0.274, 0.190)
# The published key-weight calibration (0.516, 0.315, 0.168) sums to 0.999;
# normalize it so the weights form an exact convex combination.
DEFAULT_KEY_WEIGHTS = (0.516 / 0.999, 0.315 / 0.999, 0.168 / 0.999)

# Line-of-fifths index per pitch class (C=0 .. B=11); black keys are spelled
# as flats except F#, which suits material normalized to C major / A minor.
FIFTH_INDEX_TABLE = (0, -5, 2, -3, 4, -1, 6, 1, -4, 3, -2, 5)

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class SpiralConfig:
    """Helix calibration: geometry plus chord/key blending weights."""

    radius: float = 1.0
    rise: float = DEFAULT_RISE
    chord_weights: tuple[float, float, float] = DEFAULT_CHORD_WEIGHTS
    key_weights: tuple[float, float, float] = DEFAULT_KEY_WEIGHTS

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError(f"radius must be positive, got {self.radius}")
        if not self.rise > 0:
            raise InvalidInputError(f"rise must be positive, got {self.rise}")
        for name, triple in (("chord_weights", self.chord_weights),
                             ("key_weights", self.key_weights)):
            if len(triple) != 3 or any(w <= 0 for w in triple):
                raise InvalidInputError(f"{name} must be three positive reals")
            if abs(sum(triple) - 1.0) > _WEIGHT_TOL:
                raise InvalidInputError(f"{name} must sum to 1, got {sum(triple)!r}")


@dataclass(frozen=True)
class SpelledPitch:
    """A pitch class as its position on the line of fifths (C=0, G=+1, F=-1)."""

    fifth_index: int


@dataclass(frozen=True)
class SpiralPoint:
    """A 3-D position on (or derived from) the helix."""

    x: float
    y: float
    z: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class KeyCenter:
    """Center of effect of a reference key, used by tensile strain."""

    point: SpiralPoint


@dataclass(frozen=True)
class Cloud:
    """The multiset of pitches sounding within one analysis window.

    ``weights`` defaults to all ones; members may repeat (a multiset), which
    leaves the diameter unchanged and re-weights the center of effect.
    """

    members: tuple[SpelledPitch, ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.weights is not None:
            if len(self.weights) != len(self.members):
                raise InvalidInputError("weights must match members in length")
            if any(w <= 0 for w in self.weights):
                raise InvalidInputError("cloud weights must be positive")

    def effective_weights(self) -> tuple[float, ...]:
        if self.weights is None:
            return (1.0,) * len(self.members)
        return self.weights


def spell(pitch_class: int) -> SpelledPitch:
    """Map a pitch class 0..11 to its fixed line-of-fifths spelling."""
    if not 0 <= pitch_class <= 11:
        raise InvalidInputError(f"pitch class must be in 0..11, got {pitch_class}")
    return SpelledPitch(FIFTH_INDEX_TABLE[pitch_class])


def pitch_position(fifth_index: int, cfg: SpiralConfig = SpiralConfig()) -> SpiralPoint:
    """Helix position of a spelled pitch: quarter turn + fixed rise per fifth."""
    angle = fifth_index * math.pi / 2.0
    return SpiralPoint(
        x=cfg.radius * math.sin(angle),
        y=cfg.radius * math.cos(angle),
        z=fifth_index * cfg.rise,
    )


@lru_cache(maxsize=8)
def pitch_class_positions(cfg: SpiralConfig = SpiralConfig()) -> np.ndarray:
    """(12, 3) array of helix positions for pitch classes C..B (read-only)."""
    table = np.array(
        [pitch_position(k, cfg).to_array() for k in FIFTH_INDEX_TABLE]
    )
    table.setflags(write=False)
    return table


def _member_points(cloud: Cloud, cfg: SpiralConfig) -> np.ndarray:
    if not cloud.members:
        raise InvalidInputError("cloud must contain at least one pitch")
    return np.array([pitch_position(p.fifth_index, cfg).to_array()
                     for p in cloud.members])


def cloud_diameter(cloud: Cloud, cfg: SpiralConfig = SpiralConfig()) -> float:
    """Largest pairwise distance among the cloud's helix points (0 for singletons)."""
    pts = _member_points(cloud, cfg)
    if len(pts) == 1:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2)).max())


def center_of_effect(cloud: Cloud, cfg: SpiralConfig = SpiralConfig()) -> SpiralPoint:
    """Weight-normalized centroid of the cloud's helix points."""
    pts = _member_points(cloud, cfg)
    w = np.asarray(cloud.effective_weights(), dtype=float)
    c = (pts * w[:, None]).sum(axis=0) / w.sum()
    return SpiralPoint(float(c[0]), float(c[1]), float(c[2]))


def _major_chord_center(tonic_fifth: int, cfg: SpiralConfig) -> np.ndarray:
    w1, w2, w3 = cfg.chord_weights
    # Root, fifth (one step up the line), major third (four steps up).
    return (w1 * pitch_position(tonic_fifth, cfg).to_array()
            + w2 * pitch_position(tonic_fifth + 1, cfg).to_array()
            + w3 * pitch_position(tonic_fifth + 4, cfg).to_array())


def key_center(tonic_fifth: int, cfg: SpiralConfig = SpiralConfig(),
               mode: str = "major") -> KeyCenter:
    """Center of effect of a major key: tonic, dominant and subdominant chords."""
    if mode != "major":
        raise UnsupportedModeError(
            f"only major-key centers are supported, got mode {mode!r}")
    o1, o2, o3 = cfg.key_weights
    c = (o1 * _major_chord_center(tonic_fifth, cfg)
         + o2 * _major_chord_center(tonic_fifth + 1, cfg)
         + o3 * _major_chord_center(tonic_fifth - 1, cfg))
    return KeyCenter(SpiralPoint(float(c[0]), float(c[1]), float(c[2])))


def tensile_strain(cloud: Cloud, key: KeyCenter,
                   cfg: SpiralConfig = SpiralConfig()) -> float:
    """Distance between the cloud's center of effect and the key center."""
    c = center_of_effect(cloud, cfg).to_array()
    return float(np.linalg.norm(c - key.point.to_array()))

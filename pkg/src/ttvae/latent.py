"""Tension labeling, attribute-vector extraction, and latent edits.

Fragments are scored by how their tension curves behave: direction is the
Pearson correlation with a unit ramp, level is a signed distance from a
corpus threshold, and arbitrary shapes correlate against a template curve.
Top-scoring fragments on each side form two classes whose encoder-mean
difference is the attribute vector for that property; adding a scaled copy
of the vector to a latent code steers the decoded music toward the first
class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import FragmentDataset
from .errors import InvalidInputError, MissingFragmentError
from .pianoroll import N_STEPS
from .vae.network import TensionVae

DIRECTION_KINDS = ("tensile_strain_direction", "cloud_diameter_direction")
LEVEL_KINDS = ("tensile_strain_level", "cloud_diameter_level")
STANDARD_KINDS = DIRECTION_KINDS + LEVEL_KINDS
DEFAULT_TARGET_N = 1000

_KIND_CURVE = {
    "tensile_strain_direction": "tensile",
    "tensile_strain_level": "tensile",
    "cloud_diameter_direction": "diameter",
    "cloud_diameter_level": "diameter",
}


@dataclass(frozen=True)
class ShapeTemplate:
    """A 64-step target contour; must not be constant."""

    name: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_STEPS,):
            raise InvalidInputError(
                f"template needs {N_STEPS} values, got {v.shape}")
        if v.std() == 0:
            raise InvalidInputError("template must not be constant")
        object.__setattr__(self, "values", v)


def triangle_template(peak_step: int = 32) -> ShapeTemplate:
    """Symmetric rise-then-fall template peaking at ``peak_step``."""
    steps = np.arange(N_STEPS, dtype=float)
    span = max(peak_step, N_STEPS - 1 - peak_step)
    return ShapeTemplate("triangle",
                         1.0 - np.abs(steps - peak_step) / span)


@dataclass
class AttributeVector:
    """Difference of class-mean latent codes; A is the up/high class."""

    name: str
    values: np.ndarray
    class_sizes: tuple[int, int]
    effective_thresholds: dict = field(default_factory=dict)


@dataclass
class VectorsFile:
    latent_dim: int
    checkpoint_id: str
    vectors: dict[str, AttributeVector]

    def get(self, name: str) -> AttributeVector:
        if name not in self.vectors:
            raise InvalidInputError(
                f"no vector named {name!r}; available: {sorted(self.vectors)}")
        return self.vectors[name]


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(a @ b / denom)


def direction_score(curve: np.ndarray) -> float:
    """Correlation with the unit ramp; constant curves score 0 by convention."""
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (N_STEPS,):
        raise InvalidInputError(f"curve must have {N_STEPS} values")
    ramp = np.arange(N_STEPS, dtype=float) / (N_STEPS - 1)
    return _pearson(curve, ramp)


def level_score(curve: np.ndarray, threshold: float) -> tuple[int, float]:
    """(sign, magnitude): side of the threshold and 2-norm distance from it."""
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (N_STEPS,):
        raise InvalidInputError(f"curve must have {N_STEPS} values")
    sign = 1 if curve.mean() > threshold else -1
    return sign, float(np.linalg.norm(curve - threshold))


def shape_score(curve: np.ndarray, template: ShapeTemplate) -> float:
    """Correlation with a shape template (ramp template == direction_score)."""
    curve = np.asarray(curve, dtype=float)
    if curve.shape != (N_STEPS,):
        raise InvalidInputError(f"curve must have {N_STEPS} values")
    return _pearson(curve, template.values)


@dataclass
class ClassSelection:
    """Fragment ids for the two opposed classes plus selection metadata."""

    kind: str
    class_a: list[int]          # up / high / matches-shape
    class_b: list[int]          # down / low / anti-shape
    effective_thresholds: dict
    warnings: list[str] = field(default_factory=list)


def _top_ids(scored: list[tuple[float, int]], n: int) -> list[int]:
    # Sort by score descending, fragment id ascending for ties.
    ranked = sorted(scored, key=lambda item: (-item[0], item[1]))
    return [idx for _, idx in ranked[:n]]


def _extreme_ids(scored: list[tuple[float, int]], n: int) -> tuple[list[int], list[int]]:
    """Top-n and bottom-n of one ranked order; disjoint whenever 2n <= len."""
    ranked = sorted(scored, key=lambda item: (-item[0], item[1]))
    top = [idx for _, idx in ranked[:n]]
    bottom = [idx for _, idx in ranked[len(ranked) - n:]]
    return top, bottom


def select_classes(curves: np.ndarray, kind: str,
                   target_n: int = DEFAULT_TARGET_N,
                   threshold: float | None = None,
                   template: ShapeTemplate | None = None) -> ClassSelection:
    """Label the extremes of the dataset for one tension property.

    Direction/shape kinds take the ``target_n`` highest-scoring fragments as
    class A and the lowest as class B.  Level kinds split on the threshold
    sign first (corpus mean by default) and rank by distance from it.  When
    the population cannot support two classes of ``target_n``, class sizes
    shrink to half the population (direction/shape) or the side population
    (level), with a warning recorded.
    """
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 2 or curves.shape[1] != N_STEPS:
        raise InvalidInputError("curves must be (n_fragments, 64)")
    n = len(curves)
    warnings = []
    if kind in DIRECTION_KINDS:
        scores = [(direction_score(c), i) for i, c in enumerate(curves)]
        per_class = min(target_n, n // 2)
        if target_n > n // 2:
            warnings.append(
                f"population {n} cannot fill two classes of {target_n}; "
                f"using {per_class} per class")
        class_a, class_b = _extreme_ids(scores, per_class)
        thresholds = {
            "class_a_min_score": min(scores[i][0] for i in class_a),
            "class_b_max_score": max(scores[i][0] for i in class_b),
        }
    elif kind in LEVEL_KINDS or kind.startswith("shape:") or template is not None:
        if kind in LEVEL_KINDS:
            c = float(curves.mean()) if threshold is None else float(threshold)
            magnitude = {}
            high, low = [], []
            for i, curve in enumerate(curves):
                sign, mag = level_score(curve, c)
                magnitude[i] = mag
                (high if sign > 0 else low).append((mag, i))
            per_class = min(target_n, len(high), len(low))
            if per_class < target_n:
                warnings.append(
                    f"sides hold {len(high)} high / {len(low)} low fragments; "
                    f"using {per_class} per class")
            if per_class == 0:
                raise InvalidInputError(
                    f"cannot form {kind} classes: one side is empty")
            class_a = _top_ids(high, per_class)
            class_b = _top_ids(low, per_class)
            thresholds = {
                "threshold": c,
                "class_a_min_magnitude": min(magnitude[i] for i in class_a),
                "class_b_min_magnitude": min(magnitude[i] for i in class_b),
            }
        else:
            if template is None:
                raise InvalidInputError("shape selection needs a template")
            scores = [(shape_score(c, template), i) for i, c in enumerate(curves)]
            per_class = min(target_n, n // 2)
            if target_n > n // 2:
                warnings.append(
                    f"population {n} cannot fill two classes of {target_n}; "
                    f"using {per_class} per class")
            class_a, class_b = _extreme_ids(scores, per_class)
            thresholds = {
                "class_a_min_score": min(scores[i][0] for i in class_a),
                "class_b_max_score": max(scores[i][0] for i in class_b),
            }
    else:
        raise InvalidInputError(f"unknown labeling kind {kind!r}")
    return ClassSelection(kind=kind, class_a=sorted(class_a),
                          class_b=sorted(class_b),
                          effective_thresholds=thresholds, warnings=warnings)


def attribute_vector(model: TensionVae, dataset: FragmentDataset,
                     class_a: list[int], class_b: list[int],
                     name: str) -> AttributeVector:
    """Difference of encoder posterior means between the two classes."""
    if not class_a or not class_b:
        raise InvalidInputError("both classes must be non-empty")
    for idx in list(class_a) + list(class_b):
        if not 0 <= idx < len(dataset):
            raise MissingFragmentError(
                f"fragment id {idx} is not in the dataset (size {len(dataset)})")

    def class_mean(ids, chunk=256):
        total = np.zeros(model.cfg.latent_dim, dtype=np.float64)
        for start in range(0, len(ids), chunk):
            rolls = np.stack([dataset.fragments[i].roll
                              for i in ids[start:start + chunk]])
            total += model.encode(rolls).mu.sum(axis=0, dtype=np.float64)
        return total / len(ids)

    values = class_mean(class_a) - class_mean(class_b)
    return AttributeVector(name=name, values=values.astype(np.float64),
                           class_sizes=(len(class_a), len(class_b)))


def apply_vector(z: np.ndarray, vector: AttributeVector,
                 scale: float) -> np.ndarray:
    """z + scale * vector (dimension-checked, input untouched)."""
    z = np.asarray(z)
    if z.shape[-1] != vector.values.shape[0]:
        raise InvalidInputError(
            f"latent size {z.shape[-1]} does not match vector "
            f"{vector.name!r} of size {vector.values.shape[0]}")
    return z + scale * vector.values.astype(z.dtype)


def build_vectors(model: TensionVae, dataset: FragmentDataset,
                  kinds: list[str] | None = None,
                  target_n: int = DEFAULT_TARGET_N,
                  restrict_ids: list[int] | None = None,
                  templates: dict[str, ShapeTemplate] | None = None,
                  checkpoint_id: str = "") -> VectorsFile:
    """Label the dataset and extract one attribute vector per kind.

    ``restrict_ids`` limits labeling to a subset (normally the training
    split); class ids still refer to dataset positions.
    """
    kinds = list(kinds) if kinds else list(STANDARD_KINDS)
    templates = templates or {}
    ids = list(restrict_ids) if restrict_ids is not None \
        else list(range(len(dataset)))
    vectors: dict[str, AttributeVector] = {}
    for kind in kinds:
        template = templates.get(kind)
        curve_kind = _KIND_CURVE.get(kind, "tensile")
        curves = np.stack([getattr(dataset.fragments[i], curve_kind)
                           for i in ids])
        selection = select_classes(curves, kind, target_n, template=template)
        class_a = [ids[i] for i in selection.class_a]
        class_b = [ids[i] for i in selection.class_b]
        vector = attribute_vector(model, dataset, class_a, class_b, kind)
        vector.effective_thresholds = selection.effective_thresholds
        vectors[kind] = vector
    return VectorsFile(latent_dim=model.cfg.latent_dim,
                       checkpoint_id=checkpoint_id, vectors=vectors)


def save_vectors(path, vectors_file: VectorsFile) -> None:
    payload = {
        "latent_dim": vectors_file.latent_dim,
        "checkpoint_id": vectors_file.checkpoint_id,
        "vectors": [
            {
                "name": v.name,
                "values": [float(x) for x in v.values],
                "class_sizes": list(v.class_sizes),
                "effective_thresholds": v.effective_thresholds,
            }
            for _, v in sorted(vectors_file.vectors.items())
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_vectors(path) -> VectorsFile:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise InvalidInputError(f"cannot read vectors file {path}: {err}") from err
    vectors = {}
    for item in payload.get("vectors", []):
        vectors[item["name"]] = AttributeVector(
            name=item["name"],
            values=np.array(item["values"], dtype=np.float64),
            class_sizes=tuple(item["class_sizes"]),
            effective_thresholds=item.get("effective_thresholds", {}))
    return VectorsFile(latent_dim=int(payload["latent_dim"]),
                       checkpoint_id=payload.get("checkpoint_id", ""),
                       vectors=vectors)

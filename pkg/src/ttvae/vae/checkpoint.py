"""Deterministic single-file checkpoints: JSON manifest + raw float32 blob.

Layout: magic ``TTVC``, a 4-byte little-endian manifest length, the UTF-8
JSON manifest, then the concatenated tensor bytes.  The manifest records
every tensor's name, shape, dtype and byte offset, the model config, the
training-schedule state, and a SHA-256 of the blob so truncation and
corruption are detected on load.  Tensors are serialized in sorted-name
order, so identical parameters always produce identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .config import ModelConfig

CHECKPOINT_MAGIC = b"TTVC"
CHECKPOINT_FORMAT = 1
ID_LENGTH = 16


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    schedule: dict
    ident: str


def save_checkpoint(path, params: dict[str, np.ndarray], cfg: ModelConfig,
                    schedule: dict | None = None) -> str:
    """Write the checkpoint; returns its content-derived identifier."""
    names = sorted(params)
    blob = bytearray()
    tensors = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "<f4",
            "offset": len(blob),
            "nbytes": arr.nbytes,
        })
        blob += arr.tobytes()
    digest = hashlib.sha256(bytes(blob)).hexdigest()
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "schedule": schedule or {},
        "tensors": tensors,
        "blob_sha256": digest,
    }
    encoded = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(encoded).to_bytes(4, "little"))
        fh.write(encoded)
        fh.write(bytes(blob))
    return digest[:ID_LENGTH]


def _config_diff(stored: ModelConfig, expected: ModelConfig) -> list[str]:
    diffs = []
    for name in stored.__dataclass_fields__:
        a, b = getattr(stored, name), getattr(expected, name)
        if a != b:
            diffs.append(f"{name}: checkpoint has {a!r}, requested {b!r}")
    return diffs


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint; refuses mismatched or damaged files."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if len(raw) < 8:
        raise CheckpointError(f"{path} is truncated before the manifest")
    manifest_len = int.from_bytes(raw[4:8], "little")
    manifest_end = 8 + manifest_len
    if manifest_end > len(raw):
        raise CheckpointError(f"{path} is truncated inside the manifest")
    try:
        manifest = json.loads(raw[8:manifest_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable manifest in {path}: {err}") from err
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format')!r}")

    blob = raw[manifest_end:]
    expected_size = sum(t["nbytes"] for t in manifest["tensors"])
    if len(blob) != expected_size:
        raise CheckpointError(
            f"{path} blob has {len(blob)} bytes, manifest expects "
            f"{expected_size} (file truncated or padded)")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise CheckpointError(f"{path} failed its integrity check")

    cfg = ModelConfig.from_dict(manifest["config"])
    if expected_config is not None:
        diffs = _config_diff(cfg, expected_config)
        if diffs:
            raise CheckpointError(
                "checkpoint does not match the requested config: "
                + "; ".join(diffs))

    params: dict[str, np.ndarray] = {}
    for tensor in manifest["tensors"]:
        count = int(np.prod(tensor["shape"])) if tensor["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count,
                            offset=tensor["offset"])
        params[tensor["name"]] = (arr.reshape(tensor["shape"])
                                  .astype(np.float32, copy=True))
    return Checkpoint(params=params, config=cfg,
                      schedule=manifest.get("schedule", {}),
                      ident=digest[:ID_LENGTH])

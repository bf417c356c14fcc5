"""Versioned, byte-stable checkpoint files for model parameters.

Layout: one magic line, one JSON header line (format version, model
config, tensor names/shapes in order), then the raw little-endian float64
bytes of each tensor concatenated in header order. Identical parameters
always serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"icaval-checkpoint\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or inconsistent checkpoint files."""


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    cfg = params.config
    header = {
        "format_version": FORMAT_VERSION,
        "config": {
            "vocab": cfg.vocab,
            "dim": cfg.dim,
            "layers": cfg.layers,
            "heads": cfg.heads,
            "ctx_len": cfg.ctx_len,
            "seed": cfg.seed,
        },
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in params.tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: bad header ({exc.msg})") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
        cfg = ModelConfig(**header["config"])
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return ModelParams(cfg, tensors)

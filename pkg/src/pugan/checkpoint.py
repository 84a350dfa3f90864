"""Single-file checkpoint archive.

Layout: an 8-byte magic, a little-endian uint64 manifest length, a JSON
manifest (schema version, stage, epoch, step, config snapshot, and a tensor
table with name/shape/byte-length entries), then the raw little-endian
float32 buffers in table order. Integer buffers (batch-norm step counters)
are stored as float32 and cast back on restore, exact for counts below 2^24.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointStageError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"PUGANCK\x00"
SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    stage: str
    epoch: int
    step: int
    config: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)  # name -> float32 cpu tensor

    def require_stage(self, stage):
        if self.stage != stage:
            raise CheckpointStageError(
                f"checkpoint stage is {self.stage!r}, but {stage!r} is required"
            )
        return self


def collect_states(modules):
    """Flatten module state dicts into 'module.param' -> float32 cpu tensors."""
    tensors = {}
    for prefix, module in modules.items():
        for name, value in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = value.detach().cpu().to(torch.float32).clone()
    return tensors


def restore_states(ckpt, modules):
    """Load checkpoint tensors back into modules, validating names and shapes."""
    remaining = dict(ckpt.tensors)
    for prefix, module in modules.items():
        state = module.state_dict()
        restored = {}
        for name, value in state.items():
            key = f"{prefix}.{name}"
            if key not in remaining:
                raise CheckpointError(f"checkpoint is missing parameter {key!r}")
            stored = remaining.pop(key)
            if tuple(stored.shape) != tuple(value.shape):
                raise CheckpointShapeError(
                    f"shape mismatch for parameter {key!r}: checkpoint has "
                    f"{tuple(stored.shape)}, model expects {tuple(value.shape)}"
                )
            restored[name] = stored.to(value.dtype)
        module.load_state_dict(restored)
    if remaining:
        raise CheckpointError(f"checkpoint has unexpected parameters: {sorted(remaining)}")
    return modules


def save_checkpoint(ckpt, path):
    """Serialize a Checkpoint to a single archive file."""
    entries = []
    buffers = []
    for name, tensor in ckpt.tensors.items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "nbytes": len(raw)})
        buffers.append(raw)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "config": ckpt.config,
        "tensors": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in buffers:
            fh.write(raw)
    return path


def load_checkpoint(path):
    """Read and validate a checkpoint archive."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise CheckpointFormatError(f"{path} is not a checkpoint archive (bad magic)")
        length_raw = fh.read(8)
        if len(length_raw) != 8:
            raise CheckpointTruncatedError(f"{path} ends inside the manifest header")
        (manifest_len,) = struct.unpack("<Q", length_raw)
        blob = fh.read(manifest_len)
        if len(blob) != manifest_len:
            raise CheckpointTruncatedError(f"{path} ends inside the manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{path} has a corrupt manifest: {exc}") from exc
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise CheckpointVersionError(
                f"{path} has schema version {version!r}, supported version is {SCHEMA_VERSION}"
            )
        tensors = {}
        for entry in manifest["tensors"]:
            name, shape, nbytes = entry["name"], tuple(entry["shape"]), entry["nbytes"]
            expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
            if nbytes != expected:
                raise CheckpointShapeError(
                    f"shape mismatch for parameter {name!r}: shape {shape} implies "
                    f"{expected} bytes but the buffer table declares {nbytes}"
                )
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointTruncatedError(
                    f"{path} ends inside the buffer of parameter {name!r}"
                )
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            tensors[name] = torch.from_numpy(arr.copy())
        if fh.read(1):
            raise CheckpointFormatError(f"{path} has trailing data after the last buffer")
    return Checkpoint(
        stage=manifest["stage"],
        epoch=manifest["epoch"],
        step=manifest["step"],
        config=manifest.get("config", {}),
        tensors=tensors,
    )

"""Versioned binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint64 header length, a UTF-8
JSON header (configs, step, rng state, tensor manifest), then every tensor
as little-endian float64 in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ParamStore

MAGIC = b"FLATCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ParamStore
    train_config: dict = field(default_factory=dict)
    step: int = 0
    rng_state: dict | None = None
    optimizer: dict = field(default_factory=dict)  # hyperparameters + step counter
    opt_m: np.ndarray | None = None
    opt_v: np.ndarray | None = None
    format_version: int = FORMAT_VERSION

    def tensors(self):
        out = {f"params/{name}": arr for name, arr in self.params.arrays.items()}
        if self.opt_m is not None:
            out["opt/m"] = self.opt_m
            out["opt/v"] = self.opt_v
        return out


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest, blobs, offset = [], [], 0
    for name, arr in ckpt.tensors().items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset, "count": int(data.size)})
        blobs.append(data.tobytes())
        offset += data.size
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "optimizer": ckpt.optimizer,
        "tensors": manifest,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(blob[start:start + hlen].decode("utf-8"))
    body = np.frombuffer(blob, dtype="<f8", offset=start + hlen)
    tensors = {}
    for entry in header["tensors"]:
        lo = entry["offset"]
        tensors[entry["name"]] = body[lo:lo + entry["count"]].reshape(entry["shape"]).astype(np.float64)

    cfg = ModelConfig(**header["model_config"])
    params = ParamStore(cfg)
    for name in params.arrays:
        key = f"params/{name}"
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key}")
        if tensors[key].shape != params[name].shape:
            raise CheckpointError(f"{path}: tensor {key} has shape {tensors[key].shape}, expected {params[name].shape}")
        params[name][...] = tensors[key]
    return Checkpoint(
        model_config=cfg,
        params=params,
        train_config=header.get("train_config", {}),
        step=int(header["step"]),
        rng_state=header.get("rng_state"),
        optimizer=header.get("optimizer", {}),
        opt_m=tensors.get("opt/m"),
        opt_v=tensors.get("opt/v"),
        format_version=version,
    )

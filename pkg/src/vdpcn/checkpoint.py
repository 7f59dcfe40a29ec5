"""Checkpoint archive: one npz holding the config and every named parameter.

The archive layout is a `__meta__` JSON blob (format version, model config,
free-form extras) plus one array per state-dict entry, written in sorted key
order so identical weights produce identical bytes. Loading rebuilds the
model config and validates every array shape against a freshly constructed
model before any weight is copied in.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .network import CompletionNet

FORMAT_VERSION = 1


def save_checkpoint(path, model, extra=None):
    """Write model weights and config to one deterministic npz archive."""
    meta = {
        "format_version": FORMAT_VERSION,
        "model": dataclasses.asdict(model.cfg),
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    arrays = {"__meta__": np.frombuffer(meta_bytes, dtype=np.uint8)}
    for name, tensor in model.state_dict().items():
        arrays[name] = tensor.detach().cpu().numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **{k: arrays[k] for k in sorted(arrays)})
    return path


def read_checkpoint(path):
    """Return (meta dict, {name: ndarray}) without touching torch."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        if "__meta__" not in z.files:
            raise ValueError(f"{path}: not a model checkpoint (missing __meta__)")
        meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')!r}")
        arrays = {name: z[name] for name in z.files if name != "__meta__"}
    return meta, arrays


def load_model(path, expected_cfg=None):
    """Rebuild a CompletionNet from a checkpoint, validating every shape.

    When expected_cfg is given it must equal the stored config; shape
    mismatches between stored arrays and the constructed model are an error,
    never a silent partial load.
    """
    meta, arrays = read_checkpoint(path)
    cfg = ModelConfig(**meta["model"])
    if expected_cfg is not None and dataclasses.asdict(expected_cfg) != dataclasses.asdict(cfg):
        raise ValueError(f"{path}: checkpoint model config differs from the requested config")
    model = CompletionNet(cfg)
    state = model.state_dict()
    missing = sorted(set(state) - set(arrays))
    unexpected = sorted(set(arrays) - set(state))
    if missing or unexpected:
        raise ValueError(f"{path}: state mismatch, missing {missing}, unexpected {unexpected}")
    for name, tensor in state.items():
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"{path}: shape mismatch for {name}: stored {arrays[name].shape}, model {tuple(tensor.shape)}"
            )
    model.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    return model, meta


def checkpoint_hash(path):
    """SHA-256 of the archive bytes; used to key distillation target caches."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

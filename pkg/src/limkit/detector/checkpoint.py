"""Checkpoints: ``LIMCKPT1`` + manifest + little-endian float32 payloads, config in a sibling ``.cfg``."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..tensor import precision
from .config import config_to_text, configs_from_text

MAGIC = b"LIMCKPT1"


def _state(model):
    state = {k: p.data for k, p in model.parameters().items()}
    for name, bn in model.bn_states().items():
        state[f"{name}.bn.running_mean"] = bn.running_mean
        state[f"{name}.bn.running_var"] = bn.running_var
    return state


def save_checkpoint(model, path, train_cfg=None) -> None:
    """Manifest lines are ``name shape offset`` (shape like ``8x3x3x3``, offset in bytes into the payload)."""
    path = Path(path)
    state = _state(model)
    lines, offset = [], 0
    for name, arr in state.items():
        lines.append(f"{name} {'x'.join(map(str, arr.shape))} {offset}")
        offset += arr.size * 4
    manifest = ("\n".join(lines) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    cfgs = (model.cfg,) if train_cfg is None else (model.cfg, train_cfg)
    path.with_suffix(".cfg").write_text(config_to_text(*cfgs))


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a LIMCKPT1 checkpoint")
    (mlen,) = struct.unpack("<I", raw[8:12])
    manifest = raw[12:12 + mlen].decode()
    base = 12 + mlen
    out = {}
    for line in manifest.splitlines():
        name, shape, offset = line.split()
        shape = tuple(int(s) for s in shape.split("x")) if shape else ()
        count = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=base + int(offset)).reshape(shape).astype(np.float32)
    return out


def load_checkpoint(path):
    from .model import Detector

    dc, _ = configs_from_text(Path(path).with_suffix(".cfg"))
    state = read_checkpoint(path)
    with precision("float32"):
        model = Detector(dc)
    for name, p in model.parameters().items():
        if state[name].shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.data.shape}")
        p.data = state[name].copy()
    for name, bn in model.bn_states().items():
        bn.running_mean = state[f"{name}.bn.running_mean"].astype(np.float64)
        bn.running_var = state[f"{name}.bn.running_var"].astype(np.float64)
        bn.initialized = True
    return model

"""Model checkpoint file: magic "GCKP", a JSON architecture descriptor,
and a raw little-endian float32 parameter payload with a manifest of
(name, shape, offset) entries inside the descriptor."""

from __future__ import annotations

import json
import struct

import numpy as np
import torch

from .models import build_model

MAGIC = b"GCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, meta: dict, state_dict) -> None:
    names = sorted(state_dict.keys())
    manifest = []
    payload = bytearray()
    for name in names:
        arr = state_dict[name].detach().cpu().numpy().astype("<f4")
        manifest.append([name, list(arr.shape), len(payload)])
        payload.extend(arr.tobytes())
    descriptor = json.dumps({"meta": meta, "manifest": manifest},
                            sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(descriptor)))
        fh.write(descriptor)
        fh.write(bytes(payload))


def load_checkpoint(path):
    """Returns (meta, state_dict of float32 tensors)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (desc_len,) = struct.unpack_from("<I", data, 6)
    descriptor = json.loads(data[10:10 + desc_len].decode("utf-8"))
    payload = data[10 + desc_len:]
    state = {}
    for name, shape, offset in descriptor["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, "<f4", count, offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
    return descriptor["meta"], state


def save_model(path, model, meta: dict) -> None:
    save_checkpoint(path, {**meta, "kind": model.kind}, model.state_dict())


def load_model(path):
    """Rebuild a model (eval mode) from a checkpoint; returns (model, meta)."""
    meta, state = load_checkpoint(path)
    model = build_model(meta)
    model.load_state_dict(state)
    model.eval()
    return model, meta

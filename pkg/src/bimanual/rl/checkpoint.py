"""Versioned, checksummed checkpoint files.

Layout: 8-byte magic, little-endian uint32 version, uint64 payload length,
32-byte SHA-256 of the payload, then the payload (an ``.npz`` archive whose
``meta`` entry is UTF-8 JSON).
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .networks import ActorCritic, RunningNorm
from .ppo import Adam, PpoConfig

MAGIC = b"BMNCKPT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")


class CheckpointError(RuntimeError):
    pass


def _net_arrays(prefix: str, net) -> dict[str, np.ndarray]:
    out = {}
    for i, (W, b) in enumerate(net):
        out[f"{prefix}/{i}/W"] = W
        out[f"{prefix}/{i}/b"] = b
    return out


def _net_from(prefix: str, arrays: dict) -> list:
    layers, i = [], 0
    while f"{prefix}/{i}/W" in arrays:
        layers.append((arrays[f"{prefix}/{i}/W"], arrays[f"{prefix}/{i}/b"]))
        i += 1
    return layers


def encode(model: ActorCritic, opt: Adam | None = None, cfg: PpoConfig | None = None,
           rng: np.random.Generator | None = None, extra: dict | None = None) -> bytes:
    arrays = {**_net_arrays("pi", model.pi), **_net_arrays("v", model.v), "log_std": model.log_std}
    for k, v in model.norm.state().items():
        arrays[f"norm/{k}"] = np.asarray(v)
    meta = {"model": model.meta, "extra": extra or {}}
    if opt is not None:
        meta["adam"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"adam/m/{i}"] = m
            arrays[f"adam/v/{i}"] = v
    if cfg is not None:
        meta["ppo"] = dataclasses.asdict(cfg)
    if rng is not None:
        meta["rng"] = rng.bit_generator.state
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    return _HEADER.pack(MAGIC, VERSION, len(payload), hashlib.sha256(payload).digest()) + payload


def decode(blob: bytes) -> dict:
    if len(blob) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, length, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    payload = blob[_HEADER.size :]
    if len(payload) != length:
        raise CheckpointError("checkpoint payload length mismatch")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    with np.load(io.BytesIO(payload)) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    norm = RunningNorm.from_state({k[5:]: v for k, v in arrays.items() if k.startswith("norm/")})
    model = ActorCritic(_net_from("pi", arrays), arrays["log_std"], _net_from("v", arrays), norm, meta["model"])
    out = {"model": model, "extra": meta["extra"], "opt": None, "cfg": None, "rng": None}
    if "adam" in meta:
        opt = Adam(**meta["adam"])
        i = 0
        while f"adam/m/{i}" in arrays:
            opt.m.append(arrays[f"adam/m/{i}"])
            opt.v.append(arrays[f"adam/v/{i}"])
            i += 1
        out["opt"] = opt
    if "ppo" in meta:
        out["cfg"] = PpoConfig(**meta["ppo"])
    if "rng" in meta:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        out["rng"] = rng
    return out


def save_checkpoint(path, model: ActorCritic, **kw) -> Path:
    """Write atomically: a temporary file in the same directory is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode(model, **kw)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> dict:
    return decode(Path(path).read_bytes())

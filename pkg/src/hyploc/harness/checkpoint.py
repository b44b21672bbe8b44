"""Binary checkpoint files.

Layout (little-endian)::

    magic    4s  b"HLLC"
    version  u32 1
    cfg_len  u32, then cfg_len bytes of UTF-8 ``key=value`` config text
    nblocks  u32
    per block: name_len u16, name (UTF-8), ndim u32, ndim*u32 dims, prod(dims)*f64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .model import HypLiLoc

CKPT_MAGIC = b"HLLC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def state_dict(model: HypLiLoc) -> dict[str, np.ndarray]:
    state = {name: p.data for name, p in model.named_parameters()}
    state["buffer.t_offset"] = np.asarray(model.t_offset, dtype=np.float64)
    state["buffer.t_scale"] = np.array([model.t_scale], dtype=np.float64)
    return state


def encode_checkpoint(model: HypLiLoc) -> bytes:
    cfg = model.cfg.to_text().encode("utf-8")
    parts = [struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(cfg)), cfg]
    state = state_dict(model)
    parts.append(struct.pack("<I", len(state)))
    for name, arr in state.items():
        enc = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d scalars 0-d
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: HypLiLoc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_checkpoint(model))


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.raw):
            raise CheckpointError(
                f"{self.source}: truncated {what}: expected bytes [{self.pos}, {end}), file ends at {len(self.raw)}")
        out = self.raw[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> tuple[RunConfig, dict[str, np.ndarray]]:
    rd = _Reader(raw, source)
    magic = rd.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r} at byte 0, expected {CKPT_MAGIC!r}")
    (version,) = rd.unpack("<I", "version")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{source}: unsupported version {version} at byte 4")
    (cfg_len,) = rd.unpack("<I", "config length")
    cfg = RunConfig.from_text(rd.take(cfg_len, "config").decode("utf-8"))
    (nblocks,) = rd.unpack("<I", "block count")
    state = {}
    for _ in range(nblocks):
        (nlen,) = rd.unpack("<H", "block name length")
        name = rd.take(nlen, "block name").decode("utf-8")
        (ndim,) = rd.unpack("<I", f"rank of {name}")
        dims = rd.unpack(f"<{ndim}I", f"shape of {name}") if ndim else ()
        count = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(rd.take(8 * count, f"data of {name}"), dtype="<f8")
        state[name] = data.astype(np.float64).reshape(dims)
    if rd.pos != len(raw):
        raise CheckpointError(f"{source}: {len(raw) - rd.pos} trailing bytes after byte {rd.pos}")
    return cfg, state


def load_state(model: HypLiLoc, state: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    missing = set(params) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    for name, p in params.items():
        if state[name].shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
        p.data[...] = state[name]
    model.t_offset = state["buffer.t_offset"].copy()
    model.t_scale = float(state["buffer.t_scale"][0])


def load_checkpoint(path) -> HypLiLoc:
    cfg, state = decode_checkpoint(Path(path).read_bytes(), str(path))
    model = HypLiLoc(cfg)
    load_state(model, state)
    return model

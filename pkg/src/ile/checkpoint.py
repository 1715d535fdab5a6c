"""ILEC checkpoint container and (de)serialization of training state.

Layout, little-endian: magic ``ILEC``, u32 version, u32 config byte length,
config text (``key = value`` lines), u32 array count, then per array: u32 name
length, name bytes (UTF-8), u32 rank, u32 per dim, float64 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import dump_config, parse_config
from .errors import FormatError
from .model import AdamState, IleConfig, IleModel

MAGIC = b"ILEC"
VERSION = 1
_U32 = struct.Struct("<I")


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    text = dump_config(config).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(text)), text, _U32.pack(len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError("checkpoint truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError("bad checkpoint magic")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        config = parse_config(r.take(r.u32()).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError("checkpoint config block is not UTF-8") from exc
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        arrays[name] = data.reshape(shape)
    if r.pos != len(r.raw):
        raise FormatError("trailing bytes after checkpoint arrays")
    return config, arrays


def state_arrays(model: IleModel, opt: AdamState) -> dict[str, np.ndarray]:
    out = {name: p.data for name, p in model.named_params().items()}
    for i, layer in enumerate(model.flow.layers):
        out[f"flow.{i}.perm"] = layer.perm.astype(np.float64)
    for name in opt.m:
        out[f"opt.m.{name}"] = opt.m[name]
        out[f"opt.v.{name}"] = opt.v[name]
    out["opt.step"] = np.array(float(opt.step))
    return out


def restore_state(cfg: IleConfig, arrays: dict[str, np.ndarray]) -> tuple[IleModel, AdamState]:
    """Rebuild model and optimizer; every parameter comes from ``arrays``."""
    model = IleModel.init(cfg)
    for name, p in model.named_params().items():
        if name not in arrays:
            raise FormatError(f"checkpoint lacks array '{name}'")
        if arrays[name].shape != p.data.shape:
            raise FormatError(f"array '{name}' has shape {arrays[name].shape}, expected {p.data.shape}")
        p.data = np.array(arrays[name])
    for i, layer in enumerate(model.flow.layers):
        perm = arrays.get(f"flow.{i}.perm")
        if perm is None:
            raise FormatError(f"checkpoint lacks permutation for layer {i}")
        layer.perm = perm.astype(np.intp)
        layer.__post_init__()
    opt = AdamState.init(model)
    for name in opt.m:
        opt.m[name] = np.array(arrays.get(f"opt.m.{name}", opt.m[name]))
        opt.v[name] = np.array(arrays.get(f"opt.v.{name}", opt.v[name]))
    opt.step = int(arrays["opt.step"]) if "opt.step" in arrays else 0
    return model, opt


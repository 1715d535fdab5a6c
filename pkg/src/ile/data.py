"""Bouncing-sprite sequences and the ILSQ sequence container."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, FormatError

MAGIC = b"ILSQ"
VERSION = 1
_HEADER = struct.Struct("<4s5I")


@dataclass
class SpriteConfig:
    height: int
    width: int
    sprite_size: int
    seq_len: int
    count: int = 1
    seed: int = 0
    max_speed: int = 3
    jitter: float = 1.0 / 64.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.height < 1 or self.width < 1 or self.seq_len < 1 or self.count < 0:
            raise ConfigError("grid, sequence length and count must be positive")
        if not 1 <= self.sprite_size < min(self.height, self.width):
            raise ConfigError("sprite size must be at least 1 and smaller than the grid")
        if self.max_speed < 1:
            raise ConfigError("max speed must be at least 1")
        # one reflection per axis per step needs |v| <= the travel range
        if self.max_speed > min(self.height, self.width) - self.sprite_size:
            raise ConfigError("max speed exceeds the sprite's travel range")
        if not 0.0 <= self.jitter < 0.25:
            raise ConfigError("jitter must lie in [0, 0.25)")

    @property
    def limits(self) -> tuple[int, int]:
        return self.height - self.sprite_size, self.width - self.sprite_size

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], split: str = "train") -> "SpriteConfig":
        get = cfgmod.get
        prefix = "data" if split == "train" else "test"
        kwargs = dict(
            height=get(mapping, "grid.h", int, required=True),
            width=get(mapping, "grid.w", int, required=True),
            sprite_size=get(mapping, "sprite.size", int, required=True),
            seq_len=get(mapping, "seq.len", int, required=True),
            count=get(mapping, f"{prefix}.count", int, required=True),
            seed=get(mapping, f"{prefix}.seed", int, required=True),
        )
        speed = get(mapping, "speed.max", int)
        if speed is not None:
            kwargs["max_speed"] = speed
        jitter = get(mapping, "jitter", float)
        if jitter is not None:
            kwargs["jitter"] = jitter
        if split == "test" and kwargs["seed"] == get(mapping, "data.seed", int):
            raise ConfigError("test.seed must differ from data.seed")
        return cls(**kwargs)


@dataclass
class Sequence:
    frames: np.ndarray  # (T, H, W) in [0, 1]
    positions: np.ndarray  # (T, 2) top-left sprite corner (row, col)
    velocities: np.ndarray  # (T, 2) velocity carried out of each frame

    def bounces(self, start: int, stop: int) -> bool:
        """True if a wall collision happens while moving into frames start..stop-1."""
        lo = max(start, 1)
        return bool(np.any(self.velocities[lo:stop] != self.velocities[lo - 1 : stop - 1]))


def reflect(pos: int, vel: int, limit: int) -> tuple[int, int]:
    """Advance one axis by ``vel`` and reflect off the walls at 0 and ``limit``."""
    pos += vel
    if pos > limit:
        return 2 * limit - pos, -vel
    if pos < 0:
        return -pos, -vel
    return pos, vel


def sample_velocity(rng: np.random.Generator, max_speed: int) -> np.ndarray:
    while True:
        v = rng.integers(-max_speed, max_speed + 1, size=2)
        if np.any(v != 0):
            return v


def render(positions: np.ndarray, cfg: SpriteConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    T = len(positions)
    s = cfg.sprite_size
    frames = np.zeros((T, cfg.height, cfg.width))
    for t, (r, c) in enumerate(positions):
        frames[t, r : r + s, c : c + s] = 1.0
    if cfg.jitter > 0:
        frames += rng.uniform(0.0, cfg.jitter, size=frames.shape)
        np.clip(frames, 0.0, 1.0, out=frames)
    return frames


def simulate(pos0, vel0, T: int, limits) -> tuple[np.ndarray, np.ndarray]:
    """Integer sprite positions and velocities for T frames."""
    pos = [int(p) for p in pos0]
    vel = [int(v) for v in vel0]
    positions = np.zeros((T, 2), dtype=np.int64)
    velocities = np.zeros((T, 2), dtype=np.int64)
    for t in range(T):
        if t:
            for ax in range(2):
                pos[ax], vel[ax] = reflect(pos[ax], vel[ax], limits[ax])
        positions[t] = pos
        velocities[t] = vel
    return positions, velocities


def generate_sequence(cfg: SpriteConfig, index: int) -> Sequence:
    """Sequence ``index`` of the dataset; a pure function of (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    limits = cfg.limits
    pos0 = [rng.integers(0, limits[0] + 1), rng.integers(0, limits[1] + 1)]
    vel0 = sample_velocity(rng, cfg.max_speed)
    positions, velocities = simulate(pos0, vel0, cfg.seq_len, limits)
    return Sequence(render(positions, cfg, rng), positions, velocities)


def generate_dataset(cfg: SpriteConfig) -> list[Sequence]:
    return [generate_sequence(cfg, i) for i in range(cfg.count)]


def write_sequences(path, sequences, dims: tuple[int, int, int] | None = None) -> None:
    """Write (N, T, H, W) frames (array or list of Sequence) as an ILSQ file.

    ``dims`` = (T, H, W) is only needed for an empty list.
    """
    if dims is not None and not isinstance(sequences, np.ndarray) and len(sequences) == 0:
        sequences = np.zeros((0,) + tuple(dims))
    arr = _stack(sequences)
    count, T, H, W = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, count, T, H, W))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def _stack(sequences) -> np.ndarray:
    if isinstance(sequences, np.ndarray):
        arr = sequences
    else:
        items = [s.frames if isinstance(s, Sequence) else np.asarray(s) for s in sequences]
        if not items:
            raise ConfigError("an empty dataset needs explicit dims; pass an array of shape (0, T, H, W)")
        shapes = {a.shape for a in items}
        if len(shapes) != 1:
            raise ConfigError(f"sequences have differing dims: {sorted(shapes)}")
        arr = np.stack(items)
    if arr.ndim != 4:
        raise ConfigError(f"expected (N, T, H, W) frames, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def read_sequences(path) -> tuple[tuple[int, int, int], np.ndarray]:
    """Returns ((T, H, W), frames of shape (count, T, H, W))."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than the ILSQ header")
    magic, version, count, T, H, W = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported ILSQ version {version}")
    expected = _HEADER.size + 8 * count * T * H * W
    if len(raw) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, found {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return (T, H, W), frames.reshape(count, T, H, W)

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ile.data import (
    SpriteConfig,
    generate_dataset,
    generate_sequence,
    read_sequences,
    reflect,
    render,
    simulate,
    write_sequences,
)
from ile.errors import ConfigError, FormatError


def test_reflect_upper_wall():
    assert reflect(5, 2, 6) == (5, -2)


def test_reflect_lower_wall():
    assert reflect(1, -3, 6) == (2, 3)


def test_reflect_inside():
    assert reflect(2, 2, 6) == (4, 2)


def test_reflect_onto_wall_keeps_velocity():
    assert reflect(4, 2, 6) == (6, 2)


def test_static_sprite_frames_identical():
    cfg = SpriteConfig(8, 8, 2, 6, jitter=0.0)
    positions, _ = simulate([3, 4], [0, 0], 6, cfg.limits)
    frames = render(positions, cfg)
    assert all(np.array_equal(frames[0], f) for f in frames)


def test_deterministic_by_seed_and_index():
    cfg = SpriteConfig(8, 8, 2, 10, count=3, seed=7)
    a = generate_sequence(cfg, 2).frames
    b = generate_sequence(cfg, 2).frames
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != generate_sequence(cfg, 1).frames.tobytes()


def test_dataset_index_independent_of_count():
    small = generate_dataset(SpriteConfig(8, 8, 2, 6, count=2, seed=3))
    large = generate_dataset(SpriteConfig(8, 8, 2, 6, count=5, seed=3))
    assert small[1].frames.tobytes() == large[1].frames.tobytes()


def test_jitter_range():
    seq = generate_sequence(SpriteConfig(8, 8, 2, 12, seed=1, jitter=1 / 64), 0)
    f = seq.frames
    assert f.min() >= 0.0 and f.max() <= 1.0
    background = f[f < 1.0]
    assert background.max() < 1 / 64
    assert np.sum(f == 1.0) == 12 * 4  # sprite pixels clip back to exactly 1


@pytest.mark.parametrize(
    "kw",
    [
        dict(sprite_size=8),
        dict(sprite_size=0),
        dict(max_speed=0),
        dict(max_speed=7),
        dict(jitter=0.25),
        dict(jitter=-0.1),
    ],
)
def test_invalid_config(kw):
    base = dict(height=8, width=8, sprite_size=2, seq_len=5)
    base.update(kw)
    with pytest.raises(ConfigError):
        SpriteConfig(**base)


def test_from_mapping_splits():
    m = {"grid.h": "8", "grid.w": "8", "sprite.size": "2", "seq.len": "12",
         "data.count": "5", "data.seed": "1", "test.count": "3", "test.seed": "2", "speed.max": "2"}
    train = SpriteConfig.from_mapping(m, "train")
    test = SpriteConfig.from_mapping(m, "test")
    assert (train.count, train.seed, train.max_speed) == (5, 1, 2)
    assert (test.count, test.seed) == (3, 2)
    m["test.seed"] = "1"
    with pytest.raises(ConfigError):
        SpriteConfig.from_mapping(m, "test")


def test_bounce_detection():
    cfg = SpriteConfig(8, 8, 2, 6, jitter=0.0)
    pos, vel = simulate([5, 0], [2, 0], 6, cfg.limits)
    assert pos[:, 0].tolist() == [5, 5, 3, 1, 1, 3]
    from ile.data import Sequence

    seq = Sequence(render(pos, cfg), pos, vel)
    assert seq.bounces(1, 2)
    assert not seq.bounces(2, 4)
    assert seq.bounces(2, 5)


@settings(max_examples=60, deadline=None)
@given(
    size=st.integers(4, 12),
    sprite=st.integers(1, 3),
    speed=st.integers(1, 3),
    seed=st.integers(0, 2**31),
    T=st.integers(2, 30),
)
def test_sprite_dynamics_properties(size, sprite, speed, seed, T):
    if speed > size - sprite:
        speed = size - sprite
    cfg = SpriteConfig(size, size, sprite, T, seed=seed, max_speed=speed, jitter=0.0)
    seq = generate_sequence(cfg, 0)
    # mass conservation
    assert all(np.sum(f == 1.0) == sprite**2 for f in seq.frames)
    assert set(np.unique(seq.frames)) <= {0.0, 1.0}
    # speed preserved per axis
    assert np.all(np.abs(seq.velocities) == np.abs(seq.velocities[0]))
    assert np.any(seq.velocities[0] != 0)
    # sprite stays inside the grid
    assert np.all(seq.positions >= 0)
    assert np.all(seq.positions <= np.array(cfg.limits))


def _header(raw):
    return struct.unpack("<4sIIIII", raw[:24])


class TestContainer:
    def test_layout(self, tmp_path):
        frames = np.arange(2 * 3 * 2 * 2, dtype=float).reshape(2, 3, 2, 2) / 10
        path = tmp_path / "d.ilsq"
        write_sequences(path, frames)
        raw = path.read_bytes()
        assert _header(raw) == (b"ILSQ", 1, 2, 3, 2, 2)
        assert len(raw) == 24 + frames.size * 8
        assert np.array_equal(np.frombuffer(raw[24:], "<f8"), frames.ravel())

    def test_roundtrip(self, tmp_path):
        seqs = generate_dataset(SpriteConfig(8, 8, 2, 12, count=10, seed=4))
        path = tmp_path / "d.ilsq"
        write_sequences(path, seqs)
        dims, frames = read_sequences(path)
        assert dims == (12, 8, 8)
        assert frames.tobytes() == np.stack([s.frames for s in seqs]).tobytes()
        write_sequences(tmp_path / "again.ilsq", frames)
        assert (tmp_path / "again.ilsq").read_bytes() == path.read_bytes()

    def test_empty(self, tmp_path):
        path = tmp_path / "e.ilsq"
        write_sequences(path, [], dims=(4, 3, 3))
        assert path.stat().st_size == 24
        dims, frames = read_sequences(path)
        assert dims == (4, 3, 3) and frames.shape == (0, 4, 3, 3)

    def test_empty_without_dims(self, tmp_path):
        with pytest.raises(ConfigError):
            write_sequences(tmp_path / "e.ilsq", [])

    def test_mixed_dims(self, tmp_path):
        with pytest.raises(ConfigError):
            write_sequences(tmp_path / "m.ilsq", [np.zeros((2, 3, 3)), np.zeros((3, 3, 3))])

    @pytest.mark.parametrize(
        "corrupt",
        [
            lambda raw: b"XXXX" + raw[4:],
            lambda raw: raw[:4] + struct.pack("<I", 2) + raw[8:],
            lambda raw: raw[:-8],
            lambda raw: raw + b"\0",
            lambda raw: raw[:10],
        ],
        ids=["magic", "version", "truncated", "trailing", "short-header"],
    )
    def test_rejects_corruption(self, tmp_path, corrupt):
        path = tmp_path / "d.ilsq"
        write_sequences(path, np.zeros((1, 2, 2, 2)))
        path.write_bytes(corrupt(path.read_bytes()))
        with pytest.raises(FormatError):
            read_sequences(path)

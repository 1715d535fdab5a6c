"""Invertible encoder built from affine coupling layers.

Each layer keeps the first ``ceil(D/2)`` coordinates, rescales and shifts the
rest with functions of the kept half, then applies a fixed permutation::

    y = [left ; exp(f(left)) * right + b(left)]
    h_next = y[perm]

The log-determinant of one layer is the sum of the raw log-scales ``f(left)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, SingularityError
from .tensor import Tensor


@dataclass
class Subnet:
    """Two-layer tanh network ``R^din -> R^dout``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, din: int, dout: int, hidden: int, rng: np.random.Generator, out_std: float = 0.0):
        w1 = rng.normal(0.0, 1.0 / np.sqrt(din), size=(din, hidden))
        w2 = rng.normal(0.0, out_std, size=(hidden, dout)) if out_std > 0 else np.zeros((hidden, dout))
        return cls(
            Tensor(w1, requires_grad=True),
            Tensor(np.zeros(hidden), requires_grad=True),
            Tensor(w2, requires_grad=True),
            Tensor(np.zeros(dout), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return tn.reshape(self(tn.reshape(x, (1, -1))), (-1,))
        hidden = tn.tanh(x @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class CouplingLayer:
    dim: int
    scale: Subnet
    shift: Subnet
    perm: np.ndarray
    inv_perm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.intp)
        if sorted(self.perm.tolist()) != list(range(self.dim)):
            raise ConfigError("coupling permutation must be a bijection on 0..D-1")
        self.inv_perm = np.argsort(self.perm)

    @property
    def split(self) -> int:
        return (self.dim + 1) // 2

    def params(self) -> list[Tensor]:
        return self.scale.params() + self.shift.params()


def coupling_forward(layer: CouplingLayer, h) -> tuple[Tensor, Tensor]:
    """Apply one layer to ``h`` of shape (..., D); returns (h_next, logdet (...))."""
    h = tn.as_tensor(h)
    k = layer.split
    left, right = h[..., :k], h[..., k:]
    log_scale = layer.scale(left)
    y = tn.concat([left, tn.exp(log_scale) * right + layer.shift(left)], axis=-1)
    return tn.take(y, layer.perm, axis=-1), tn.tsum(log_scale, axis=-1)


def coupling_inverse(layer: CouplingLayer, h_next) -> Tensor:
    h_next = tn.as_tensor(h_next)
    y = tn.take(h_next, layer.inv_perm, axis=-1)
    k = layer.split
    left, right = y[..., :k], y[..., k:]
    right = (right - layer.shift(left)) * tn.exp(-layer.scale(left))
    return tn.concat([left, right], axis=-1)


class FlowNetwork:
    """Stack of coupling layers; ``encode`` maps frames to embeddings."""

    def __init__(self, dim: int, depth: int = 8, hidden: int = 64, seed: int = 0, out_std: float = 0.0):
        if dim < 2:
            raise ConfigError(f"flow dimension must be at least 2, got {dim}")
        if depth < 1 or hidden < 1:
            raise ConfigError("flow depth and hidden width must be positive")
        self.dim = dim
        self.hidden = hidden
        rng = np.random.default_rng([seed, 0x464C4F57])
        k = (dim + 1) // 2
        self.layers: list[CouplingLayer] = []
        for i in range(depth):
            perm = np.arange(dim) if i == 0 else rng.permutation(dim)
            self.layers.append(
                CouplingLayer(
                    dim,
                    Subnet.init(k, dim - k, hidden, rng, out_std),
                    Subnet.init(k, dim - k, hidden, rng, out_std),
                    perm,
                )
            )

    @property
    def depth(self) -> int:
        return len(self.layers)

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for sub_name, sub in (("scale", layer.scale), ("shift", layer.shift)):
                for pname, p in zip(("w1", "b1", "w2", "b2"), sub.params()):
                    out[f"flow.{i}.{sub_name}.{pname}"] = p
        return out


def encode(net: FlowNetwork, frame) -> tuple[Tensor, Tensor]:
    """Frame(s) of shape (..., D) to embeddings and log|det dz/do| per frame."""
    h = tn.as_tensor(frame)
    if h.shape[-1] != net.dim:
        raise ConfigError(f"frame size {h.shape[-1]} does not match flow dimension {net.dim}")
    total = None
    for layer in net.layers:
        h, ld = coupling_forward(layer, h)
        total = ld if total is None else total + ld
    return h, total


def decode(net: FlowNetwork, z) -> Tensor:
    h = tn.as_tensor(z)
    if h.shape[-1] != net.dim:
        raise ConfigError(f"embedding size {h.shape[-1]} does not match flow dimension {net.dim}")
    for layer in reversed(net.layers):
        h = coupling_inverse(layer, h)
    return h


def numeric_jacobian(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a map R^D -> R^D."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


def brute_force_logdet(net: FlowNetwork, frame, h: float = 1e-5) -> float:
    """log|det| of the encoder Jacobian assembled column by column, via LU."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (net.dim,):
        raise ConfigError(f"expected a single frame of size {net.dim}")
    if net.dim > 16:
        raise ConfigError("brute_force_logdet is limited to D <= 16")
    jac = numeric_jacobian(lambda x: encode(net, x)[0].data, frame, h)
    sign, logabs = np.linalg.slogdet(jac)
    if sign == 0 or not np.isfinite(logabs):
        raise SingularityError("encoder Jacobian is singular")
    return float(logabs)

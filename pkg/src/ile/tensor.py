"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values live in numpy arrays. While a :class:`Tape` is active, every primitive
whose operands require gradients appends a record holding its operands and a
vector-Jacobian product closure; :func:`backward` replays those records in
reverse. Every primitive checks its result for NaN/Inf and raises
:class:`~ile.errors.NumericError` instead of letting non-finite values spread.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import DimensionError, NumericError, ShapeError, SingularityError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "backward",
    "finite_diff_check",
    "matmul",
    "ridge_solve",
    "exp",
    "log",
    "tanh",
    "sqrt",
    "absolute",
    "clamp_min",
    "square",
    "tsum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "take",
    "scatter",
]

_TAPES: list["Tape"] = []


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite value produced")
    return arr


class Tensor:
    """A float64 array plus a flag saying whether gradients flow through it."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = _check_finite(arr, "tensor")
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal constructor: arr is already float64 and checked
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Ordered log of traced primitives.

    Use as a context manager; operations executed inside the ``with`` block are
    recorded if any operand requires gradients.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, arr: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    _check_finite(arr, op)
    tape = _TAPES[-1] if _TAPES else None
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor._wrap(arr, True)
        tape.records.append((out, inputs, vjp))
        return out
    return Tensor._wrap(arr, False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * out / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("div", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", a.data @ b.data, (a, b), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _emit("log", out, (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def vjp(g):
        with np.errstate(divide="ignore"):
            return (_check_finite(g * 0.5 / out, "sqrt backward"),)

    return _emit("sqrt", out, (a,), vjp)


def absolute(a) -> Tensor:
    """|a| with derivative sign(a), which is 0 at a = 0."""
    a = as_tensor(a)
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp_min(a, lo: float = 0.0) -> Tensor:
    """max(a, lo); derivative 1 strictly above lo and 0 elsewhere."""
    a = as_tensor(a)
    return _emit("clamp_min", np.maximum(a.data, lo), (a,), lambda g: (g * (a.data > lo),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", np.asarray(out, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        if a.ndim >= 2:
            axes[-1], axes[-2] = axes[-2], axes[-1]
    inv = np.argsort(axes)
    return _emit("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("getitem", np.array(a.data[index]), (a,), vjp)


def take(a, indices, axis: int = -1) -> Tensor:
    """Gather along one axis; indices are a fixed integer array."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim

    def vjp(g):
        full = np.zeros_like(a.data)
        idx = [slice(None)] * a.ndim
        idx[ax] = indices
        np.add.at(full, tuple(idx), g)
        return (full,)

    return _emit("take", np.take(a.data, indices, axis=ax), (a,), vjp)


def scatter(values, index, shape) -> Tensor:
    """Zeros of ``shape`` with ``out[index] = values``; positions must not repeat."""
    values = as_tensor(values)
    out = np.zeros(shape)
    out[index] = values.data
    return _emit("scatter", out, (values,), lambda g: (np.array(g[index]),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, tensors, vjp)


def ridge_solve(m, rhs, lam: float = 1e-8) -> Tensor:
    """Minimizer of ``||m x - rhs||^2 + lam ||x||^2`` via the normal equations.

    ``m`` is P x Q and ``rhs`` is P x R (or a length-P vector, in which case the
    result is a length-Q vector). Gradients flow to both ``m`` and ``rhs``
    through the adjoint of the Cholesky solve.
    """
    m, rhs = as_tensor(m), as_tensor(rhs)
    if lam < 0 or not np.isfinite(lam):
        raise NumericError(f"ridge_solve: invalid lambda {lam}")
    if m.ndim != 2:
        raise DimensionError(f"ridge_solve: m must be a matrix, got shape {m.shape}")
    vector = rhs.ndim == 1
    b = rhs.data[:, None] if vector else rhs.data
    if b.ndim != 2 or b.shape[0] != m.shape[0]:
        raise DimensionError(f"ridge_solve: rhs shape {rhs.shape} does not match m {m.shape}")
    M = m.data
    q = M.shape[1]
    gram = M.T @ M
    gram[np.diag_indices(q)] += lam
    try:
        factor = sla.cho_factor(gram, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise SingularityError("ridge_solve: normal matrix is not positive definite") from exc
    piv = np.abs(np.diag(factor[0])) ** 2
    if piv.min() <= q * np.finfo(float).eps * piv.max():
        raise SingularityError("ridge_solve: normal matrix is numerically singular")
    x = sla.cho_solve(factor, M.T @ b, check_finite=False)

    def vjp(g):
        gx = g[:, None] if vector else g
        u = sla.cho_solve(factor, gx, check_finite=False)
        mu = M @ u
        gm = b @ u.T - (M @ x) @ u.T - mu @ x.T
        return gm, (mu[:, 0] if vector else mu)

    return _emit("ridge_solve", x[:, 0] if vector else x, (m, rhs), vjp)


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` for every leaf on ``tape``.

    Leaves are tensors that require gradients but were not produced by a
    recorded operation. The tape's records are released afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise RuntimeError("tape has already been consumed")
    produced = {id(rec[0]) for rec in tape.records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
    tape.records.clear()
    tape.consumed = True
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss
    return {t: Tensor._wrap(_check_finite(grads[k], "backward"), False) for k, t in leaves.items()}


def finite_diff_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Iterable,
    h: float = 1e-5,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f`` maps a list of tensors to a scalar tensor. When ``analytic`` is
    omitted the gradients come from tracing ``f`` and calling :func:`backward`.
    The per-coordinate error is ``|analytic - fd| / max(1, |fd|)``.
    """
    base = [np.array(as_tensor(p).data, dtype=np.float64) for p in params]
    if analytic is None:
        leaves = [Tensor(p, requires_grad=True) for p in base]
        with Tape() as tape:
            out = f(leaves)
        grads = backward(out, tape)
        analytic = [
            grads[t].data if t in grads else np.zeros_like(t.data) for t in leaves
        ]

    def value(arrays) -> float:
        v = float(as_tensor(f([Tensor(a) for a in arrays])).data)
        if not np.isfinite(v):
            raise NumericError("finite_diff_check: non-finite evaluation")
        return v

    worst = 0.0
    for i, p in enumerate(base):
        ga = np.asarray(analytic[i], dtype=np.float64).reshape(p.shape)
        for j in np.ndindex(p.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[i][j] += h
            minus[i][j] -= h
            fd = (value(plus) - value(minus)) / (2.0 * h)
            worst = max(worst, abs(ga[j] - fd) / max(1.0, abs(fd)))
    return worst

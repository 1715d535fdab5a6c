import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ile import tensor as tn
from ile.errors import DimensionError, NumericError, ShapeError, SingularityError
from ile.tensor import Tape, Tensor, backward, finite_diff_check, ridge_solve


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def pinv_solution(m, rhs):
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return vt.T @ np.diag(1.0 / s) @ u.T @ rhs


class TestMatmul:
    def test_identity(self):
        out = tn.matmul(np.eye(2), [[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_rotation(self):
        out = tn.matmul([[0.0, 1.0], [-1.0, 0.0]], [[1.0], [0.0]])
        np.testing.assert_array_equal(out.data, [[0.0], [-1.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(tn.matmul(a, b).data, triple_loop(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tn.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestRidgeSolve:
    def test_least_squares_mean(self):
        x = ridge_solve([[1.0], [1.0]], [[0.0], [2.0]], 0.0)
        np.testing.assert_allclose(x.data, [[1.0]], atol=1e-15)

    def test_identity_system(self):
        b = np.array([[1.5], [-2.0], [0.25]])
        np.testing.assert_allclose(ridge_solve(np.eye(3), b, 0.0).data, b, atol=1e-15)

    def test_matches_svd_pseudoinverse(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(6, 3))
        rhs = rng.normal(size=(6, 2))
        x = ridge_solve(m, rhs, 1e-8).data
        ref = pinv_solution(m, rhs)
        assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_lambda_zero_full_rank(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(8, 4))
        rhs = rng.normal(size=(8, 3))
        x = ridge_solve(m, rhs, 0.0).data
        ref = pinv_solution(m, rhs)
        assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8

    @pytest.mark.parametrize("lam", [0.0, 1e-8, 0.3])
    def test_optimality_residual(self, lam):
        rng = np.random.default_rng(11)
        m = rng.normal(size=(7, 3))
        rhs = rng.normal(size=(7, 2))
        x = ridge_solve(m, rhs, lam).data
        resid = m.T @ (m @ x - rhs) + lam * x
        assert np.max(np.abs(resid)) < 1e-8

    def test_vector_rhs(self):
        x = ridge_solve(np.eye(2), np.array([1.0, 2.0]), 0.0)
        assert x.shape == (2,)

    def test_singular_without_ridge(self):
        with pytest.raises(SingularityError):
            ridge_solve([[1.0, 1.0], [1.0, 1.0]], [[1.0], [2.0]], 0.0)

    def test_non_finite_input(self):
        with pytest.raises(NumericError):
            ridge_solve([[np.nan]], [[1.0]], 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        m0, b0 = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        w = rng.normal(size=(3, 2))
        err = finite_diff_check(lambda p: tn.tsum(ridge_solve(p[0], p[1], 0.1) * w), [m0, b0])
        assert err < 1e-7


class TestBackward:
    def test_sum(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = tn.tsum(x)
        grads = backward(loss, tape)
        np.testing.assert_array_equal(grads[x].data, [1.0, 1.0, 1.0])

    def test_half_squared_norm(self):
        x = Tensor([0.5, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = 0.5 * tn.tsum(tn.square(x))
        np.testing.assert_allclose(backward(loss, tape)[x].data, x.data)

    def test_fan_out_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            loss = tn.tsum(x * x + x + x)
        np.testing.assert_allclose(backward(loss, tape)[x].data, [6.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ShapeError):
            backward(y, tape)

    def test_tape_consumed(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = tn.tsum(x)
        backward(loss, tape)
        assert len(tape) == 0
        with pytest.raises(RuntimeError):
            backward(loss, tape)

    def test_untraced_ops_record_nothing(self):
        with Tape() as tape:
            tn.exp(Tensor([1.0]))
        assert len(tape) == 0

    def test_abs_subgradient_at_zero(self):
        x = Tensor([0.0, 1.0, -1.0], requires_grad=True)
        with Tape() as tape:
            loss = tn.tsum(tn.absolute(x))
        np.testing.assert_array_equal(backward(loss, tape)[x].data, [0.0, 1.0, -1.0])

    def test_nan_raises(self):
        with pytest.raises(NumericError):
            tn.log(Tensor([-1.0]))
        with pytest.raises(NumericError):
            Tensor([np.inf])


class TestFiniteDiffCheck:
    def test_quadratic(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(4, 4))
        q = q @ q.T
        x0 = rng.normal(size=(4, 1))
        f = lambda p: tn.tsum(p[0] * (Tensor(q) @ p[0]))
        assert finite_diff_check(f, [x0]) < 1e-9

    def test_planted_fault(self):
        x0 = np.array([3.0, -4.0, 5.0])
        f = lambda p: 0.5 * tn.tsum(tn.square(p[0]))
        err = finite_diff_check(f, [x0], analytic=[1.1 * x0])
        assert err == pytest.approx(0.1, abs=1e-6)

    def test_non_finite_evaluation(self):
        f = lambda p: tn.tsum(tn.log(p[0]))
        with pytest.raises(NumericError):
            finite_diff_check(f, [np.array([1e-7])], h=1e-5, analytic=[np.array([1.0])])


# every differentiable primitive against central differences on random inputs
_small = st.integers(1, 4)


def _arr(rng, shape, lo=-1.5, hi=1.5):
    return rng.uniform(lo, hi, size=shape)


PRIMITIVES = {
    "add": (lambda p: p[0] + p[1], lambda r, a, b: [_arr(r, (a, b)), _arr(r, (1, b))]),
    "sub": (lambda p: p[0] - p[1], lambda r, a, b: [_arr(r, (a, b)), _arr(r, (a, b))]),
    "mul": (lambda p: p[0] * p[1], lambda r, a, b: [_arr(r, (a, b)), _arr(r, (a, 1))]),
    "div": (lambda p: p[0] / p[1], lambda r, a, b: [_arr(r, (a, b)), _arr(r, (a, b), 0.5, 2.0)]),
    "matmul": (lambda p: p[0] @ p[1], lambda r, a, b: [_arr(r, (a, b)), _arr(r, (b, 2))]),
    "exp": (lambda p: tn.exp(p[0]), lambda r, a, b: [_arr(r, (a, b))]),
    "log": (lambda p: tn.log(p[0]), lambda r, a, b: [_arr(r, (a, b), 0.5, 2.0)]),
    "tanh": (lambda p: tn.tanh(p[0]), lambda r, a, b: [_arr(r, (a, b))]),
    "sqrt": (lambda p: tn.sqrt(p[0]), lambda r, a, b: [_arr(r, (a, b), 0.5, 2.0)]),
    "abs": (lambda p: tn.absolute(p[0]), lambda r, a, b: [_arr(r, (a, b), 0.1, 1.0) * r.choice([-1, 1], (a, b))]),
    "clamp": (lambda p: tn.clamp_min(p[0], 0.05), lambda r, a, b: [_arr(r, (a, b), 0.1, 1.0) * r.choice([-1, 1], (a, b))]),
    "square": (lambda p: tn.square(p[0]), lambda r, a, b: [_arr(r, (a, b))]),
    "sum_axis": (lambda p: tn.tsum(p[0], axis=1), lambda r, a, b: [_arr(r, (a, b))]),
    "transpose": (lambda p: tn.transpose(p[0]), lambda r, a, b: [_arr(r, (a, b))]),
    "reshape": (lambda p: tn.reshape(p[0], (-1,)), lambda r, a, b: [_arr(r, (a, b))]),
    "getitem": (lambda p: p[0][..., :1], lambda r, a, b: [_arr(r, (a, b))]),
    "take": (lambda p: tn.take(p[0], np.arange(p[0].shape[1])[::-1], axis=1), lambda r, a, b: [_arr(r, (a, b))]),
    "concat": (lambda p: tn.concat([p[0], p[1]], axis=1), lambda r, a, b: [_arr(r, (a, b)), _arr(r, (a, 2))]),
    "scatter": (lambda p: tn.scatter(p[0], (np.arange(p[0].shape[0]),), (p[0].shape[0] + 1,)), lambda r, a, b: [_arr(r, (a,))]),
    "ridge": (lambda p: ridge_solve(p[0], p[1], 0.2), lambda r, a, b: [_arr(r, (a + 2, b)), _arr(r, (a + 2, 2))]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@settings(max_examples=15, deadline=None)
@given(a=_small, b=_small, seed=st.integers(0, 2**32 - 1))
def test_primitive_gradients(name, a, b, seed):
    op, make = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    inputs = make(rng, a, b)
    out_shape = op([Tensor(x) for x in inputs]).shape
    weights = Tensor(rng.normal(size=out_shape))
    err = finite_diff_check(lambda p: tn.tsum(op(p) * weights), inputs, h=1e-5)
    assert err < 1e-4

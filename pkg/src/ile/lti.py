"""Latent linear time-invariant prior.

The transition matrix is kept in real Jordan form: a block diagonal of 2x2
blocks ``[[a, b], [-b, a]]`` whose eigenvalues are ``a +/- ib``. The blocks are
derived from unconstrained parameters so that every eigenvalue magnitude stays
at or below one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError, SingularityError
from .tensor import Tensor


@dataclass
class JnfParams:
    theta_alpha: Tensor
    theta_beta: Tensor
    epsilon: float = 1e-14

    def __post_init__(self):
        self.theta_alpha = tn.as_tensor(self.theta_alpha)
        self.theta_beta = tn.as_tensor(self.theta_beta)
        if self.theta_alpha.shape != self.theta_beta.shape or self.theta_alpha.ndim != 1:
            raise ConfigError("theta_alpha and theta_beta must be vectors of equal length")
        if not 0.0 < self.epsilon <= 1e-6:
            raise ConfigError(f"epsilon must lie in (0, 1e-6], got {self.epsilon}")

    @property
    def n(self) -> int:
        return 2 * self.theta_alpha.shape[0]

    @classmethod
    def init(cls, n: int, rng: np.random.Generator, epsilon: float = 1e-14) -> "JnfParams":
        """Near-identity start: real parts in [0.85, 1), small imaginary parts."""
        if n < 2 or n % 2:
            raise ConfigError(f"state dimension must be even and positive, got {n}")
        blocks = n // 2
        ta = rng.uniform(1e-3, 0.15, size=blocks)
        tb = rng.uniform(0.5, 0.9, size=blocks)
        return cls(Tensor(ta, requires_grad=True), Tensor(tb, requires_grad=True), epsilon)


@dataclass
class StateMatrix:
    alpha: Tensor
    beta: Tensor
    matrix: Tensor

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def jnf_map(p: JnfParams) -> tuple[Tensor, Tensor]:
    """Per-block real and imaginary parts (alpha, beta)."""
    alpha = tn.clamp_min((1.0 - p.epsilon) - tn.absolute(p.theta_alpha), 0.0)
    beta = tn.clamp_min(1.0 - tn.absolute(p.theta_beta), 0.0) * tn.sqrt(1.0 - alpha * alpha)
    return alpha, beta


def _block_indices(n: int):
    k = np.arange(n // 2)
    rows = np.concatenate([2 * k, 2 * k + 1, 2 * k, 2 * k + 1])
    cols = np.concatenate([2 * k, 2 * k + 1, 2 * k + 1, 2 * k])
    return rows, cols


def assemble(alpha, beta) -> StateMatrix:
    """Block-diagonal matrix from per-block (alpha, beta)."""
    alpha, beta = tn.as_tensor(alpha), tn.as_tensor(beta)
    n = 2 * alpha.shape[0]
    values = tn.concat([alpha, alpha, beta, -beta])
    return StateMatrix(alpha, beta, tn.scatter(values, _block_indices(n), (n, n)))


def build_state_matrix(p: JnfParams) -> StateMatrix:
    if p.n % 2:
        raise ConfigError("state dimension must be even")
    return assemble(*jnf_map(p))


def spectral_radius(A: StateMatrix) -> float:
    a, b = A.alpha.data, A.beta.data
    return float(np.max(np.sqrt(a * a + b * b)))


def _mat(A) -> Tensor:
    return A.matrix if isinstance(A, StateMatrix) else tn.as_tensor(A)


def observability_stack(A, C, T: int) -> Tensor:
    """Rows ``C, CA, ..., CA^(T-1)`` stacked into a (T*D, n) matrix."""
    if T < 1:
        raise ConfigError(f"horizon must be at least 1, got {T}")
    a, block = _mat(A), tn.as_tensor(C)
    if block.shape[1] != a.shape[0]:
        raise DimensionError(f"C has {block.shape[1]} columns but A is {a.shape}")
    blocks = [block]
    for _ in range(T - 1):
        block = block @ a
        blocks.append(block)
    return blocks[0] if T == 1 else tn.concat(blocks, axis=0)


def infer_initial_state(O, Z, lam: float = 1e-8) -> Tensor:
    """Least-squares initial state(s); ``Z`` is a T*D vector or (T*D, B) matrix."""
    O, Z = tn.as_tensor(O), tn.as_tensor(Z)
    if Z.shape[0] != O.shape[0]:
        raise DimensionError(f"stacked embeddings have {Z.shape[0]} rows, stack has {O.shape[0]}")
    return tn.ridge_solve(O, Z, lam)


def rollout(A, C, x0, T: int) -> Tensor:
    """Mean trajectory ``C A^t x0`` for t < T.

    ``x0`` of shape (n,) gives (T, D); shape (n, B) gives (B, T, D).
    """
    if T < 1:
        raise ConfigError(f"horizon must be at least 1, got {T}")
    a, c, x = _mat(A), tn.as_tensor(C), tn.as_tensor(x0)
    vector = x.ndim == 1
    if vector:
        x = tn.reshape(x, (-1, 1))
    outs = []
    for t in range(T):
        if t:
            x = a @ x
        outs.append(c @ x)
    traj = tn.concat([tn.reshape(o, (1,) + o.shape) for o in outs], axis=0)  # (T, D, B)
    if vector:
        return tn.reshape(traj, traj.shape[:2])
    return tn.transpose(traj, (2, 0, 1))


def simulate_lti(A, C, x0, T: int, noise_std: float, seed: int = 0) -> np.ndarray:
    """Noisy observations around the rollout; returns a (T, D) array."""
    if noise_std < 0:
        raise ConfigError("noise_std must be non-negative")
    mean = rollout(A, C, x0, T).data
    if noise_std == 0:
        return mean.copy()
    rng = np.random.default_rng(seed)
    return mean + noise_std * rng.standard_normal(mean.shape)


def smoother_oracle(A, C, Z, prior_cov: float = 1e8, process_noise: float = 0.0) -> np.ndarray:
    """Smoothed mean of x0 from a Kalman filter plus Rauch-Tung-Striebel pass.

    Observation noise is the identity and the prior is ``N(0, prior_cov I)``.
    The filter runs in information form, so the flat prior causes no
    cancellation; with zero process noise the backward gain is ``A^-1``.
    Works in plain numpy and shares no code with :func:`infer_initial_state`.
    """
    A = np.asarray(_mat(A).data, dtype=np.float64)
    C = np.asarray(tn.as_tensor(C).data, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    n = A.shape[0]
    T = Z.shape[0]
    Z = Z.reshape(T, -1)
    eye = np.eye(n)
    try:
        a_inv = np.linalg.solve(A, eye)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("transition matrix is singular") from exc

    info = eye / prior_cov  # information matrix of the current prediction
    vec = np.zeros(n)
    filt_means, filt_covs, pred_infos, pred_means = [], [], [], []
    for t in range(T):
        if t:
            if process_noise == 0:
                info = a_inv.T @ info @ a_inv
                vec = a_inv.T @ vec
            else:
                cov = A @ filt_covs[-1] @ A.T + process_noise * eye
                info = np.linalg.inv(cov)
                vec = info @ (A @ filt_means[-1])
            pred_infos.append(info)
            pred_means.append(A @ filt_means[-1])
        info = info + C.T @ C
        vec = vec + C.T @ Z[t]
        try:
            chol = np.linalg.cholesky(info)
        except np.linalg.LinAlgError as exc:
            raise SingularityError("information matrix is singular") from exc
        mean = np.linalg.solve(chol.T, np.linalg.solve(chol, vec))
        filt_means.append(mean)
        filt_covs.append(np.linalg.solve(chol.T, np.linalg.solve(chol, eye)))

    smoothed = filt_means[-1]
    for t in range(T - 2, -1, -1):
        if process_noise == 0:
            gain = a_inv
        else:
            gain = filt_covs[t] @ A.T @ pred_infos[t]
        smoothed = filt_means[t] + gain @ (smoothed - pred_means[t])
    return smoothed

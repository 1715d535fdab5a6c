"""Exact-likelihood sequence objective, training step and frame prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import config as cfgmod
from . import tensor as tn
from .errors import ConfigError, NumericError, SingularityError
from .flow import FlowNetwork, decode, encode
from .lti import (
    JnfParams,
    StateMatrix,
    build_state_matrix,
    observability_stack,
    rollout,
    spectral_radius,
)
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

# config key -> (attribute, type); attributes without a key are derived
_KEYS: dict[str, tuple[str, type]] = {
    "grid.h": ("height", int),
    "grid.w": ("width", int),
    "seq.len": ("seq_len", int),
    "cond.len": ("cond_len", int),
    "flow.depth": ("flow_depth", int),
    "flow.hidden": ("flow_hidden", int),
    "flow.train": ("train_flow", bool),
    "state.dim": ("state_dim", int),
    "ridge.lambda": ("ridge_lambda", float),
    "gamma.floor": ("gamma_floor", float),
    "gamma.exponent": ("gamma_exponent", float),
    "gamma.mode": ("gamma_mode", str),
    "gamma.detach": ("gamma_detach", bool),
    "jnf.epsilon": ("epsilon", float),
    "opt.lr": ("lr", float),
    "opt.beta1": ("beta1", float),
    "opt.beta2": ("beta2", float),
    "opt.eps": ("adam_eps", float),
    "opt.clip": ("clip", float),
    "batch": ("batch", int),
    "steps": ("steps", int),
    "seed": ("seed", int),
}
_REQUIRED = ("grid.h", "grid.w", "seq.len", "cond.len")


@dataclass
class IleConfig:
    height: int
    width: int
    seq_len: int
    cond_len: int
    flow_depth: int = 8
    flow_hidden: int = 64
    train_flow: bool = True
    state_dim: int = 0  # 0 selects 2 * D
    ridge_lambda: float = 1e-8
    gamma_floor: float = 1e-12
    gamma_exponent: float = 1.0
    gamma_mode: str = "sequence"  # "frame", or "none" for unit scale
    gamma_detach: bool = True
    epsilon: float = 1e-14
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip: float = 10.0
    batch: int = 16
    steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.state_dim == 0:
            self.state_dim = 2 * self.dim
        self.validate()

    @property
    def dim(self) -> int:
        return self.height * self.width

    def validate(self) -> None:
        if self.height < 1 or self.width < 1 or self.dim < 2:
            raise ConfigError("frame must have at least two pixels")
        if self.cond_len < 1:
            raise ConfigError("cond.len must be at least 1")
        if self.seq_len <= self.cond_len:
            raise ConfigError("seq.len must exceed cond.len")
        if self.state_dim < 2 or self.state_dim % 2:
            raise ConfigError(f"state.dim must be even and positive, got {self.state_dim}")
        if self.state_dim > self.seq_len * self.dim:
            raise ConfigError("state.dim must not exceed seq.len * D (initial state unidentifiable)")
        if self.flow_depth < 1 or self.flow_hidden < 1 or self.batch < 1 or self.steps < 0:
            raise ConfigError("flow.depth, flow.hidden and batch must be positive; steps non-negative")
        for name in ("lr", "gamma_floor", "adam_eps", "clip", "epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge.lambda must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optimizer decays must lie in [0, 1)")
        if self.gamma_mode not in ("sequence", "frame", "none"):
            raise ConfigError(f"gamma.mode must be 'sequence', 'frame' or 'none', got {self.gamma_mode!r}")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "IleConfig":
        kwargs = {}
        for key, (attr, cast) in _KEYS.items():
            value = cfgmod.get(mapping, key, cast, required=key in _REQUIRED)
            if value is not None:
                kwargs[attr] = value
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, object]:
        return {key: getattr(self, attr) for key, (attr, _) in _KEYS.items()}


CONFIG_KEYS = tuple(_KEYS)


@dataclass
class LossBreakdown:
    predictive: float
    logdet_term: float
    scale_term: float
    total: float
    gamma: float
    objective: Tensor | None = field(default=None, repr=False, compare=False)
    gammas: np.ndarray | None = field(default=None, repr=False, compare=False)


class IleModel:
    """Flow encoder plus the LTI parameters (theta_alpha, theta_beta, C)."""

    def __init__(self, flow: FlowNetwork, jnf: JnfParams, C: Tensor):
        self.flow = flow
        self.jnf = jnf
        self.C = C

    @classmethod
    def init(cls, cfg: IleConfig) -> "IleModel":
        flow = FlowNetwork(cfg.dim, cfg.flow_depth, cfg.flow_hidden, seed=cfg.seed)
        if not cfg.train_flow:
            for p in flow.params():
                p.requires_grad = False
        rng = np.random.default_rng([cfg.seed, 0x4C5449])
        n = cfg.state_dim
        jnf = JnfParams.init(n, rng, cfg.epsilon)
        C = Tensor(rng.normal(0.0, 0.1 / np.sqrt(n), size=(cfg.dim, n)), requires_grad=True)
        return cls(flow, jnf, C)

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.flow.named_params())
        out["lti.theta_alpha"] = self.jnf.theta_alpha
        out["lti.theta_beta"] = self.jnf.theta_beta
        out["lti.C"] = self.C
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_params().items() if p.requires_grad}

    def state_matrix(self) -> StateMatrix:
        return build_state_matrix(self.jnf)


def scale_gamma(Z, floor: float = 1e-12) -> float:
    """Mean absolute embedding value, bounded below by ``floor``."""
    Z = np.asarray(tn.as_tensor(Z).data)
    return float(max(np.mean(np.abs(Z)), floor))


def _as_batch(frames) -> np.ndarray:
    arr = np.asarray(tn.as_tensor(frames).data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ConfigError(f"frames must be (T, D) or (B, T, D), got shape {arr.shape}")
    return arr


def sequence_loss(
    model: IleModel,
    frames,
    cfg: IleConfig,
    A: StateMatrix | None = None,
    gamma: np.ndarray | None = None,
) -> LossBreakdown:
    """Negative log-likelihood of each sequence under the LTI prior, batch-averaged.

    ``frames`` is (T, D) for one sequence or (B, T, D) for a batch. All T
    frames are used to infer the initial state. The returned breakdown holds
    batch means; ``objective`` is the traced mean total for differentiation.

    With ``cfg.gamma_detach`` the scale statistic is a constant of the graph.
    Passing ``gamma`` (shape (B,) or (B, T) by ``cfg.gamma_mode``) pins it to
    given values, which is how finite differences reproduce that surrogate.
    """
    frames = _as_batch(frames)
    B, T, D = frames.shape
    if A is None:
        A = model.state_matrix()
    z, ld = encode(model.flow, frames)  # (B, T, D), (B, T)
    O = observability_stack(A, model.C, T)
    rhs = tn.transpose(tn.reshape(z, (B, T * D)))  # (T*D, B)
    x0 = tn.ridge_solve(O, rhs, cfg.ridge_lambda)
    resid = rhs - O @ x0

    axes = (1, 2) if cfg.gamma_mode == "sequence" else (2,)
    if cfg.gamma_mode == "none":
        g = Tensor(np.ones((B, 1)))
    elif gamma is not None:
        g = Tensor(np.asarray(gamma, dtype=np.float64).reshape(B, -1))
    elif cfg.gamma_detach:
        g = Tensor(np.maximum(np.abs(z.data).mean(axis=axes), cfg.gamma_floor).reshape(B, -1))
    else:
        g = tn.reshape(tn.clamp_min(tn.mean(tn.absolute(z), axis=axes), cfg.gamma_floor), (B, -1))
    # g is (B, 1) per sequence or (B, T) per frame; expand to the (T*D, B) residual layout
    expand = np.repeat(np.arange(g.shape[1]), T * D // g.shape[1])
    inv = tn.transpose(tn.take(1.0 / g, expand, axis=1))
    predictive = 0.5 * tn.tsum(tn.square(resid * inv), axis=0)  # (B,)
    logdet = -tn.tsum(ld, axis=1)
    scale = -cfg.gamma_exponent * tn.tsum(tn.log(g), axis=1)
    total = predictive + logdet + scale
    return LossBreakdown(
        predictive=float(predictive.data.mean()),
        logdet_term=float(logdet.data.mean()),
        scale_term=float(scale.data.mean()),
        total=float(total.data.mean()),
        gamma=float(g.data.mean()),
        objective=tn.mean(total),
        gammas=g.data.reshape(B, -1) if cfg.gamma_mode == "frame" else g.data.reshape(B),
    )


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, model: IleModel) -> "AdamState":
        params = model.trainable()
        return cls(
            0,
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
        )


def train_step(model: IleModel, batch, opt: AdamState, cfg: IleConfig):
    """One clipped Adam step on the batch-mean loss.

    Returns ``(model, opt, breakdown)``. On a numeric or singularity failure
    the step is rejected: nothing is modified and ``breakdown`` is None.
    """
    params = model.trainable()
    try:
        batch = _as_batch(batch)
        with Tape() as tape:
            bd = sequence_loss(model, batch, cfg)
            grads = tn.backward(bd.objective, tape)
    except (NumericError, SingularityError) as exc:
        log.warning("step %d rejected: %s", opt.step, exc)
        return model, opt, None

    g = {k: (grads[p].data if p in grads else np.zeros_like(p.data)) for k, p in params.items()}
    norm = float(np.sqrt(sum(float(np.sum(v * v)) for v in g.values())))
    if norm > cfg.clip:
        g = {k: v * (cfg.clip / norm) for k, v in g.items()}

    step = opt.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1**step
    corr2 = 1.0 - b2**step
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        m = b1 * opt.m[k] + (1.0 - b1) * g[k]
        v = b2 * opt.v[k] + (1.0 - b2) * g[k] * g[k]
        new_p[k] = p.data - cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)
        new_m[k], new_v[k] = m, v
    if not all(np.all(np.isfinite(a)) for a in new_p.values()):
        log.warning("step %d rejected: non-finite parameter update", opt.step)
        return model, opt, None

    for k, p in params.items():
        p.data = new_p[k]
    opt.m, opt.v, opt.step = new_m, new_v, step
    bd.objective = None
    return model, opt, bd


def sample_batch(count: int, batch: int, seed: int, step: int) -> np.ndarray:
    """Sequence indices for a given step; depends only on (seed, step)."""
    rng = np.random.default_rng([seed, step, 0xBA7C])
    return rng.choice(count, size=batch, replace=batch > count)


def fit(
    model: IleModel,
    opt: AdamState,
    sequences: np.ndarray,
    cfg: IleConfig,
    steps: int,
    on_step: Callable[[int, LossBreakdown, float], None] | None = None,
    max_rejected: int = 10,
) -> tuple[IleModel, AdamState]:
    """Run ``steps`` training steps over (N, T, D) sequences.

    ``on_step(step, breakdown, spectral_radius)`` is called after each
    accepted step. Raises NumericError after ``max_rejected`` consecutive
    rejections.
    """
    sequences = np.asarray(sequences, dtype=np.float64)
    rejected = 0
    for _ in range(steps):
        idx = sample_batch(len(sequences), cfg.batch, cfg.seed, opt.step)
        radius = spectral_radius(model.state_matrix())
        model, opt, bd = train_step(model, sequences[idx], opt, cfg)
        if bd is None:
            rejected += 1
            if rejected >= max_rejected:
                raise NumericError(f"{rejected} consecutive steps rejected; aborting")
            # the step counter drives batch sampling; advance it past the bad batch
            opt.step += 1
            continue
        rejected = 0
        if on_step is not None:
            on_step(opt.step, bd, radius)
    return model, opt


def predict_frames(model: IleModel, cond, m: int, cfg: IleConfig, clamp: bool = True) -> np.ndarray:
    """Extrapolate ``m`` frames after the ``k`` conditioning frames.

    The initial state is inferred from the conditioning frames only. ``cond``
    is (k, D) or (B, k, D); the result has matching leading shape.
    """
    single = np.ndim(cond) == 2
    cond = _as_batch(cond)
    B, k, D = cond.shape
    if k < 1 or m < 1:
        raise ConfigError("need at least one conditioning frame and a positive horizon")
    A = model.state_matrix()
    z, _ = encode(model.flow, cond)
    O = observability_stack(A, model.C, k)
    x0 = tn.ridge_solve(O, tn.transpose(tn.reshape(z, (B, k * D))), cfg.ridge_lambda)
    future = rollout(A, model.C, x0, k + m).data[:, k:]
    out = decode(model.flow, future).data
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out

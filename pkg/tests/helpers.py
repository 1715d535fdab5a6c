"""Shared builders for the test suite."""
import numpy as np

from ile.flow import FlowNetwork
from ile.lti import JnfParams
from ile.model import IleConfig, IleModel, sequence_loss
from ile.tensor import Tensor


def rebind(model: IleModel, tensors: dict) -> IleModel:
    """Shallow copy of ``model`` whose named parameters are the given tensors."""
    flow = FlowNetwork.__new__(FlowNetwork)
    flow.__dict__.update(model.flow.__dict__)
    flow.layers = [_copy_layer(layer) for layer in model.flow.layers]
    out = IleModel(flow, model.jnf, model.C)
    ta, tb = model.jnf.theta_alpha, model.jnf.theta_beta
    for name, t in tensors.items():
        parts = name.split(".")
        if parts[0] == "flow":
            sub = getattr(flow.layers[int(parts[1])], parts[2])
            setattr(sub, parts[3], t)
        elif name == "lti.theta_alpha":
            ta = t
        elif name == "lti.theta_beta":
            tb = t
        elif name == "lti.C":
            out.C = t
    out.jnf = JnfParams(ta, tb, model.jnf.epsilon)
    return out


def _copy_layer(layer):
    import copy

    new = copy.copy(layer)
    new.scale = copy.copy(layer.scale)
    new.shift = copy.copy(layer.shift)
    return new


def small_config(**kw) -> IleConfig:
    base = dict(height=2, width=2, seq_len=3, cond_len=1, flow_depth=2, flow_hidden=3, state_dim=4)
    base.update(kw)
    return IleConfig(**base)


def random_model(cfg: IleConfig, seed: int, out_std: float = 0.3) -> IleModel:
    rng = np.random.default_rng(seed)
    model = IleModel.init(cfg)
    model.flow = FlowNetwork(cfg.dim, cfg.flow_depth, cfg.flow_hidden, seed=seed, out_std=out_std)
    model.jnf = JnfParams(
        Tensor(rng.uniform(0.05, 0.4, cfg.state_dim // 2), requires_grad=True),
        Tensor(rng.uniform(0.2, 0.9, cfg.state_dim // 2), requires_grad=True),
        cfg.epsilon,
    )
    model.C = Tensor(rng.normal(size=(cfg.dim, cfg.state_dim)), requires_grad=True)
    return model


def loss_gradient_error(model: IleModel, frames: np.ndarray, cfg: IleConfig) -> float:
    """Max relative error of the traced loss gradient against central differences.

    A detached scale statistic is pinned at its base value so the finite
    differences see the same surrogate the tape differentiates.
    """
    from ile import tensor as tn

    names = list(model.named_params())
    base = [model.named_params()[k].data for k in names]
    pinned = None
    if cfg.gamma_detach and cfg.gamma_mode != "none":
        pinned = sequence_loss(model, frames, cfg).gammas

    def f(ts):
        return sequence_loss(rebind(model, dict(zip(names, ts))), frames, cfg, gamma=pinned).objective

    return tn.finite_diff_check(f, base)

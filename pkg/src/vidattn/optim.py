"""RMSProp and Adadelta, updating parameter tensors in place."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from .tensor import Tensor


@dataclass
class OptState:
    kind: str
    rho: float
    eps: float
    sq_grad: Dict[str, np.ndarray] = field(default_factory=dict)
    sq_update: Dict[str, np.ndarray] = field(default_factory=dict)  # adadelta only
    steps: int = 0


def _check(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")


def rmsprop_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
                 state: Optional[OptState] = None, lr: float = 1e-3, rho: float = 0.9,
                 eps: float = 1e-8) -> OptState:
    """v <- rho v + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps)."""
    _check(params, grads)
    state = state or OptState("rmsprop", rho, eps)
    for name, g in grads.items():
        p = params[name].data
        v = state.sq_grad.get(name)
        if v is None:
            v = state.sq_grad[name] = np.zeros_like(p)
        v *= state.rho
        v += (1 - state.rho) * g * g
        p -= lr * g / (np.sqrt(v) + state.eps)
    state.steps += 1
    return state


def adadelta_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
                  state: Optional[OptState] = None, lr: float = 1.0, rho: float = 0.95,
                  eps: float = 1e-6, lr_scale: Optional[Mapping[str, float]] = None) -> OptState:
    """Adadelta with a learning-rate multiplier on the update.

    ``lr_scale`` optionally multiplies the step of named parameters further;
    the squared-update average always tracks the unscaled step.
    """
    _check(params, grads)
    state = state or OptState("adadelta", rho, eps)
    for name, g in grads.items():
        p = params[name].data
        eg = state.sq_grad.get(name)
        if eg is None:
            eg = state.sq_grad[name] = np.zeros_like(p)
            state.sq_update[name] = np.zeros_like(p)
        ed = state.sq_update[name]
        eg *= state.rho
        eg += (1 - state.rho) * g * g
        delta = -(np.sqrt(ed + state.eps) / np.sqrt(eg + state.eps)) * g
        ed *= state.rho
        ed += (1 - state.rho) * delta * delta
        p += (lr * lr_scale.get(name, 1.0) if lr_scale else lr) * delta
    state.steps += 1
    return state

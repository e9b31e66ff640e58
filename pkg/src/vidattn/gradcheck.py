"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor, backward


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5,
               wrt: Sequence[int] = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` maps Tensors to a Tensor of any shape; non-scalar outputs are
    contracted with a fixed random cotangent so every output element matters.
    Inputs should be float64.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(inputs)) if wrt is None else wrt
    probe = fn(*[Tensor(a) for a in inputs])
    cot = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar(*ts):
        out = fn(*ts)
        return F.sum(F.mul(out, cot))

    ts = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(inputs)]
    backward(scalar(*ts))
    worst = 0.0
    for i in wrt:
        analytic = ts[i].grad if ts[i].grad is not None else np.zeros_like(inputs[i])
        numeric = np.zeros_like(inputs[i])
        flat = inputs[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = fn(*[Tensor(a) for a in inputs]).data
            flat[j] = orig - eps
            down = fn(*[Tensor(a) for a in inputs]).data
            flat[j] = orig
            # difference the outputs before contracting, so large outputs do not swamp small slopes
            numeric.reshape(-1)[j] = float(np.sum(cot * (up - down))) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst

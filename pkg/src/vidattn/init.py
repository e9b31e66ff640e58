"""Weight initializers."""
from __future__ import annotations

import numpy as np


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_uniform_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on [-b, b] with b = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be >= 1, got fan_in={fan_in}, fan_out={fan_out}")
    bound = xavier_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


def orthogonal_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Matrix with orthonormal rows (m <= n) or columns (m > n), from the QR
    factorization of a standard Gaussian matrix with the sign of R's diagonal
    folded in so the result is uniformly distributed."""
    m, n = shape
    if m < 1 or n < 1:
        raise ValueError(f"orthogonal_init needs a positive 2-D shape, got {shape}")
    a = rng.standard_normal((max(m, n), min(m, n)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T if m <= n else q

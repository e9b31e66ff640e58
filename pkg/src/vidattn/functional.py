"""Differentiable operations on :class:`~vidattn.tensor.Tensor`.

Feature maps are ``[N, C, H, W]``; an unbatched ``[C, H, W]`` input is
accepted where noted and gives an unbatched result.
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .tensor import Tensor, as_tensor, make_node

ArrayLike = Union[Tensor, np.ndarray, float]


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a, dtype=b.dtype if isinstance(b, Tensor) else None)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                     "mul")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_node(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                     lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return make_node(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                     lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean")


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse everything but the leading batch axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make_node(np.concatenate([x.data for x in xs], axis=axis), xs,
                     lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (dropping that axis)."""
    def bw(g):
        out = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)
    return make_node(np.take(x.data, index, axis=axis), (x,), bw, "take")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    n = len(xs)
    return make_node(np.stack([x.data for x in xs], axis=axis), xs,
                     lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


# ---------------------------------------------------------------- activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``W x + b`` for a vector ``x`` of length n, or row-wise for ``x`` of shape [N, n]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2:
        raise ValueError(f"dense: weight must be 2-D [m, n], got shape {w.shape}")
    m, n = w.shape
    if x.shape[-1] != n:
        raise ValueError(f"dense: input dimension {x.shape[-1]} does not match weight columns {n}")
    if b.shape != (m,):
        raise ValueError(f"dense: bias shape {b.shape} does not match weight rows {m}")
    squeeze = x.ndim == 1
    xd = x.data[None] if squeeze else x.data
    y = xd @ w.data.T + b.data

    def bw(g):
        g2 = g[None] if squeeze else g
        gx = g2 @ w.data
        return (gx[0] if squeeze else gx), g2.T @ xd, g2.sum(axis=0)

    return make_node(y[0] if squeeze else y, (x, w, b), bw, "dense")


# ---------------------------------------------------------------- convolution

def _same_pad(size: int, k: int, stride: int) -> Tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def conv_geometry(h: int, w: int, k: int, stride: int, padding: str):
    """Output size and (top, bottom, left, right) zero padding."""
    if padding == "same":
        ho, pt, pb = _same_pad(h, k, stride)
        wo, pl, pr = _same_pad(w, k, stride)
    elif padding == "valid":
        if k > h or k > w:
            raise ValueError(f"conv2d: kernel {k} larger than input {h}x{w} with 'valid' padding")
        ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}; expected 'same' or 'valid'")
    return ho, wo, (pt, pb, pl, pr)


def _batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a feature map [C,H,W] or [N,C,H,W], got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x`` with kernels ``w`` [C_out, C_in, k, k] plus bias."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    x, unbatched = _batched(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d: kernels must be [C_out, C_in, k, k], got shape {w.shape}")
    co, ci, k, _ = w.shape
    if k % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    n, c, h, wd = x.shape
    if c != ci:
        raise ValueError(f"conv2d: input channels {c} != kernel input channels {ci}")
    if b.shape != (co,):
        raise ValueError(f"conv2d: bias shape {b.shape} != output channels ({co},)")
    ho, wo, (pt, pb, pl, pr) = conv_geometry(h, wd, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # im2col: rows (n, out_row, out_col), columns (c_in, ki, kj)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, ci * k * k)
    wmat = w.data.reshape(co, ci * k * k)
    y = (cols @ wmat.T + b.data).reshape(n, ho, wo, co)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))

    def bw(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, co)
        gw = (gmat.T @ cols).reshape(w.shape)
        gb = gmat.sum(axis=0)
        if not x.requires_grad:
            return None, gw, gb
        gcols = (gmat @ wmat).reshape(n, ho, wo, ci, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[..., i, j].transpose(0, 3, 1, 2)
        return gxp[:, :, pt:pt + h, pl:pl + wd], gw, gb

    out = make_node(y, (x, w, b), bw, "conv2d")
    return reshape(out, out.shape[1:]) if unbatched else out


def maxpool2d(x: Tensor, k: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max over k x k windows; gradient goes to the first maximal element."""
    stride = k if stride is None else stride
    if k < 1 or stride < 1:
        raise ValueError(f"maxpool2d: k and stride must be >= 1, got k={k}, stride={stride}")
    x = as_tensor(x)
    x, unbatched = _batched(x)
    n, c, h, wd = x.shape
    if k > h or k > wd:
        raise ValueError(f"maxpool2d: window {k} larger than input {h}x{wd}")
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros_like(x.data)
        for idx in range(k * k):
            i, j = divmod(idx, k)
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(arg == idx, g, 0)
        return (gx,)

    out = make_node(np.ascontiguousarray(y), (x,), bw, "maxpool2d")
    return reshape(out, out.shape[1:]) if unbatched else out


# ---------------------------------------------------------------- loss

def log_softmax_np(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tuple[Tensor, np.ndarray]:
    """Mean of ``-log softmax(logits)[label]`` over rows, and the probabilities.

    ``logits`` is [K] with an int label, or [..., K] with labels of shape [...].
    """
    logits = as_tensor(logits)
    k = logits.shape[-1]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"softmax_cross_entropy: labels shape {labels.shape} != logits batch shape {logits.shape[:-1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {k})")
    logp = log_softmax_np(logits.data)
    probs = np.exp(logp)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    count = max(labels.size, 1)
    loss = np.asarray(-picked.sum() / count, dtype=logits.dtype)

    def bw(g):
        d = probs.copy()
        np.put_along_axis(d, labels[..., None], np.take_along_axis(d, labels[..., None], -1) - 1, -1)
        return (d * (g / count),)

    return make_node(loss, (logits,), bw, "softmax_xent"), probs


# ---------------------------------------------------------------- sampling

def affine_grid(theta: Tensor, out_h: int, out_w: int, in_h: int, in_w: int) -> Tensor:
    """Map a corner-aligned target grid through ``theta`` into input pixel coordinates.

    ``theta`` is [2, 3] or [N, 2, 3] acting on normalized (x, y, 1) = (col, row, 1)
    in [-1, 1]. Returns [(N,) out_h, out_w, 2] holding (row, col).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"affine_grid: output size must be positive, got {out_h}x{out_w}")
    theta = as_tensor(theta)
    unbatched = theta.ndim == 2
    th = theta.data[None] if unbatched else theta.data
    if th.shape[1:] != (2, 3):
        raise ValueError(f"affine_grid: theta must be [2,3] or [N,2,3], got {theta.shape}")
    dt = th.dtype
    # centred target offsets in output pixels; exact half-integers so identity
    # theta at equal sizes lands exactly on the input lattice
    v = np.arange(out_h, dtype=dt) - dt.type((out_h - 1) / 2)
    u = np.arange(out_w, dtype=dt) - dt.type((out_w - 1) / 2)
    vv, uu = np.meshgrid(v, u, indexing="ij")
    half_h, half_w = dt.type((in_h - 1) / 2), dt.type((in_w - 1) / 2)

    def ratio(a, b):
        return dt.type((a - 1) / (b - 1)) if b > 1 else dt.type(0)

    # basis for the row output: theta[1] . (row_x, row_y, row_1)
    row_basis = (uu * ratio(in_h, out_w), vv * ratio(in_h, out_h), np.full_like(uu, half_h))
    col_basis = (uu * ratio(in_w, out_w), vv * ratio(in_w, out_h), np.full_like(uu, half_w))

    def lin(t, basis):
        return (t[:, 0, None, None] * basis[0] + t[:, 1, None, None] * basis[1]) + t[:, 2, None, None] * basis[2]

    rows = half_h + lin(th[:, 1], row_basis)
    cols = half_w + lin(th[:, 0], col_basis)
    grid = np.stack([rows, cols], axis=-1)

    def bw(g):
        g = g[None] if unbatched else g
        gr, gc = g[..., 0], g[..., 1]
        out = np.zeros_like(th)
        for j in range(3):
            out[:, 1, j] = (gr * row_basis[j]).sum(axis=(1, 2))
            out[:, 0, j] = (gc * col_basis[j]).sum(axis=(1, 2))
        return (out[0] if unbatched else out,)

    return make_node(grid[0] if unbatched else grid, (theta,), bw, "affine_grid")


class _Gather:
    """Bilinear reads from x [N, C, H, W] at fractional (rows, cols) of shape [N, P].

    Values come back channel-last as [N, P, C]; out-of-bounds corners read zero.
    """

    def __init__(self, x: np.ndarray, rows: np.ndarray, cols: np.ndarray):
        self.xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        self.rows = np.ascontiguousarray(rows, dtype=x.dtype)
        self.cols = np.ascontiguousarray(cols, dtype=x.dtype)
        self.values = _kernels.gather_forward(self.xt, self.rows, self.cols)

    def backward(self, g: np.ndarray, need_x: bool = True):
        """g: [N, P, C] -> (dx [N,C,H,W] or None, drows [N,P], dcols [N,P])."""
        g = np.ascontiguousarray(g, dtype=self.xt.dtype)
        dxt, drows, dcols = _kernels.gather_backward(self.xt, self.rows, self.cols, g, need_x)
        dx = np.ascontiguousarray(dxt.transpose(0, 3, 1, 2)) if need_x else None
        return dx, drows, dcols


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Sample ``x`` [(N,) C, H, W] at ``grid`` [(N,) Ho, Wo, 2] of (row, col) pixel coordinates."""
    x, grid = as_tensor(x), as_tensor(grid)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    gd = grid.data[None] if grid.ndim == 3 else grid.data
    if gd.shape[0] != xd.shape[0] or gd.shape[-1] != 2:
        raise ValueError(f"bilinear_sample: grid shape {grid.shape} incompatible with input {x.shape}")
    n, c = xd.shape[:2]
    ho, wo = gd.shape[1:3]
    gather = _Gather(xd, gd[..., 0].reshape(n, -1), gd[..., 1].reshape(n, -1))
    y = np.ascontiguousarray(gather.values.transpose(0, 2, 1)).reshape(n, c, ho, wo)

    def bw(g):
        g = (g[None] if unbatched else g).reshape(n, c, ho * wo).transpose(0, 2, 1)
        dx, dr, dcol = gather.backward(g, need_x=x.requires_grad)
        dgrid = np.stack([dr, dcol], axis=-1).reshape(gd.shape)
        if dx is not None and unbatched:
            dx = dx[0]
        return dx, (dgrid[0] if grid.ndim == 3 else dgrid)

    return make_node(y[0] if unbatched else y, (x, grid), bw, "bilinear_sample")

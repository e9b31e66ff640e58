"""Soft attention stages: spatial transformer and deformable convolution."""
from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from . import functional as F
from .functional import conv_geometry
from .tensor import Tensor, as_tensor, make_node

IDENTITY_THETA = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

STN_OUTPUT_SIZE = 32
LOC_CHANNELS = (20, 20)
LOC_HIDDEN = 50


# ---------------------------------------------------------------- spatial transformer

def loc_param_shapes(in_h: int = 64, in_w: int = 64, prefix: str = "loc.") -> Dict[str, tuple]:
    """Parameter shapes of the localization network.

    pool(2) -> conv(5x5, 20) -> pool(2) -> conv(5x5, 20) -> fc(50) -> fc(6).
    """
    c1, c2 = LOC_CHANNELS
    flat = c2 * (in_h // 4) * (in_w // 4)
    return {
        prefix + "conv1.w": (c1, 1, 5, 5), prefix + "conv1.b": (c1,),
        prefix + "conv2.w": (c2, c1, 5, 5), prefix + "conv2.b": (c2,),
        prefix + "fc1.w": (LOC_HIDDEN, flat), prefix + "fc1.b": (LOC_HIDDEN,),
        prefix + "fc2.w": (6, LOC_HIDDEN), prefix + "fc2.b": (6,),
    }


def localization_forward(image: Tensor, p: Mapping[str, Tensor], prefix: str = "loc.",
                         in_size=(64, 64)) -> Tensor:
    """Predict affine parameters theta [N, 2, 3] from images [N, 1, H, W] (or [1, H, W])."""
    image = as_tensor(image)
    unbatched = image.ndim == 3
    if unbatched:
        image = F.reshape(image, (1,) + image.shape)
    if image.ndim != 4 or image.shape[1:] != (1,) + tuple(in_size):
        raise ValueError(f"localization net expects [N, 1, {in_size[0]}, {in_size[1]}] input, got {image.shape}")
    h = F.maxpool2d(image, 2)
    h = F.relu(F.conv2d(h, p[prefix + "conv1.w"], p[prefix + "conv1.b"]))
    h = F.maxpool2d(h, 2)
    h = F.relu(F.conv2d(h, p[prefix + "conv2.w"], p[prefix + "conv2.b"]))
    h = F.relu(F.dense(F.flatten(h), p[prefix + "fc1.w"], p[prefix + "fc1.b"]))
    theta = F.reshape(F.dense(h, p[prefix + "fc2.w"], p[prefix + "fc2.b"]), (-1, 2, 3))
    return F.reshape(theta, (2, 3)) if unbatched else theta


def stn_forward(image: Tensor, p: Mapping[str, Tensor], out_size: int = STN_OUTPUT_SIZE,
                prefix: str = "loc.", theta: Tensor = None) -> Tensor:
    """Localization -> affine grid -> bilinear sampler. Returns [N, 1, out, out].

    Passing ``theta`` bypasses the localization net.
    """
    image = as_tensor(image)
    unbatched = image.ndim == 3
    if unbatched:
        image = F.reshape(image, (1,) + image.shape)
    h, w = image.shape[2:]
    if theta is None:
        theta = localization_forward(image, p, prefix=prefix, in_size=(h, w))
    theta = as_tensor(theta, dtype=image.dtype)
    if theta.ndim == 2:
        theta = F.reshape(theta, (1, 2, 3))
    if theta.shape[0] != image.shape[0]:
        theta = F.mul(theta, np.ones((image.shape[0], 1, 1), dtype=image.dtype))
    grid = F.affine_grid(theta, out_size, out_size, h, w)
    out = F.bilinear_sample(image, grid)
    return F.reshape(out, out.shape[1:]) if unbatched else out


# ---------------------------------------------------------------- deformable convolution

def offset_channels(k: int) -> int:
    return 2 * k * k


def offset_conv_forward(x: Tensor, w: Tensor, b: Tensor, k: int, stride: int = 1) -> Tensor:
    """Offset field [N, 2k^2, H', W'] predicted by a k x k 'same' convolution over ``x``."""
    w = as_tensor(w)
    if w.shape[0] != offset_channels(k) or w.shape[2] != k:
        raise ValueError(f"offset conv must have {offset_channels(k)} outputs and a {k}x{k} kernel, got {w.shape}")
    return F.conv2d(x, w, b, stride=stride, padding="same")


def deformable_conv(x: Tensor, w: Tensor, b: Tensor, offsets: Tensor,
                    stride: int = 1, padding: str = "same") -> Tensor:
    """Convolution whose kernel taps are displaced by ``offsets``.

    Channel 2n of ``offsets`` is the row displacement and 2n+1 the column
    displacement for kernel tap n (row-major over the k x k kernel).
    Fractional taps are read by bilinear interpolation with zero padding.
    """
    x, w, b, offsets = as_tensor(x), as_tensor(w), as_tensor(b), as_tensor(offsets)
    unbatched = x.ndim == 3
    if unbatched:
        x = F.reshape(x, (1,) + x.shape)
        offsets = F.reshape(offsets, (1,) + offsets.shape)
    n, c, h, wd = x.shape
    if w.ndim != 4 or w.shape[1] != c or w.shape[2] != w.shape[3]:
        raise ValueError(f"deformable_conv: kernels {w.shape} incompatible with {c} input channels")
    co, _, k, _ = w.shape
    kk = k * k
    ho, wo, (pt, _, pl, _) = conv_geometry(h, wd, k, stride, padding)
    if offsets.shape != (n, 2 * kk, ho, wo):
        raise ValueError(f"deformable_conv: offset field shape {offsets.shape} != expected {(n, 2 * kk, ho, wo)}")
    if b.shape != (co,):
        raise ValueError(f"deformable_conv: bias shape {b.shape} != ({co},)")
    dt = x.dtype
    ti, tj = np.divmod(np.arange(kk), k)
    # sample points ordered (output row, output col, tap) so the gathered
    # block reshapes straight to [N, P, K*C] for one matmul
    base_r = (np.arange(ho) * stride - pt)[:, None, None] + ti[None, None, :]  # [Ho, 1, K]
    base_c = (np.arange(wo) * stride - pl)[None, :, None] + tj[None, None, :]  # [1, Wo, K]
    off = offsets.data.reshape(n, kk, 2, ho, wo).transpose(0, 3, 4, 1, 2)  # [N, Ho, Wo, K, 2]
    rows = (base_r.astype(dt) + off[..., 0]).reshape(n, -1)
    cols = (base_c.astype(dt) + off[..., 1]).reshape(n, -1)
    gather = F._Gather(x.data, rows, cols)
    p = ho * wo
    vals = gather.values.reshape(n, p, kk * c)
    wk = w.data.transpose(0, 2, 3, 1).reshape(co, kk * c)  # column index: tap * C + channel
    y = vals @ wk.T + b.data
    y = np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(n, co, ho, wo)

    def bw(g):
        g = g.reshape(n, co, p).transpose(0, 2, 1)  # [N, P, Co]
        gwk = g.reshape(n * p, co).T @ vals.reshape(n * p, kk * c)
        gw = gwk.reshape(co, k, k, c).transpose(0, 3, 1, 2).astype(dt)
        gb = g.sum(axis=(0, 1))
        gvals = (g @ wk).reshape(n, p * kk, c)
        gx, gr, gc = gather.backward(gvals, need_x=x.requires_grad)
        goff = np.stack([gr.reshape(n, ho, wo, kk), gc.reshape(n, ho, wo, kk)], axis=-1)
        return gx, gw, gb, np.ascontiguousarray(goff.transpose(0, 3, 4, 1, 2)).reshape(offsets.shape)

    out = make_node(y, (x, w, b, offsets), bw, "deformable_conv")
    return F.reshape(out, out.shape[1:]) if unbatched else out

"""Compiled inner loops for bilinear gathers.

Loops run in a fixed order, so results are deterministic.
"""
import math

import numba
import numpy as np


@numba.njit(cache=True)
def gather_forward(xt, rows, cols):
    """xt: [N, H, W, C]; rows, cols: [N, P] -> values [N, P, C]."""
    n_, h, w, c = xt.shape
    p_ = rows.shape[1]
    out = np.zeros((n_, p_, c), dtype=xt.dtype)
    for n in range(n_):
        for p in range(p_):
            r = rows[n, p]
            q = cols[n, p]
            r0 = math.floor(r)
            c0 = math.floor(q)
            fr = r - r0
            fc = q - c0
            ir = int(r0)
            ic = int(c0)
            for dr in range(2):
                rr = ir + dr
                if rr < 0 or rr >= h:
                    continue
                wr = fr if dr == 1 else 1.0 - fr
                for dc in range(2):
                    cc = ic + dc
                    if cc < 0 or cc >= w:
                        continue
                    wgt = wr * (fc if dc == 1 else 1.0 - fc)
                    for ch in range(c):
                        out[n, p, ch] += wgt * xt[n, rr, cc, ch]
    return out


@numba.njit(cache=True)
def gather_backward(xt, rows, cols, g, need_x):
    """Gradients of gather_forward given g [N, P, C].

    Returns (dxt [N, H, W, C], drows [N, P], dcols [N, P]).
    """
    n_, h, w, c = xt.shape
    p_ = rows.shape[1]
    dxt = np.zeros(xt.shape if need_x else (1, 1, 1, 1), dtype=xt.dtype)
    drows = np.zeros((n_, p_), dtype=xt.dtype)
    dcols = np.zeros((n_, p_), dtype=xt.dtype)
    for n in range(n_):
        for p in range(p_):
            r = rows[n, p]
            q = cols[n, p]
            r0 = math.floor(r)
            c0 = math.floor(q)
            fr = r - r0
            fc = q - c0
            ir = int(r0)
            ic = int(c0)
            gr = 0.0
            gc = 0.0
            for dr in range(2):
                rr = ir + dr
                if rr < 0 or rr >= h:
                    continue
                wr = fr if dr == 1 else 1.0 - fr
                sr = 1.0 if dr == 1 else -1.0
                for dc in range(2):
                    cc = ic + dc
                    if cc < 0 or cc >= w:
                        continue
                    wc = fc if dc == 1 else 1.0 - fc
                    sc = 1.0 if dc == 1 else -1.0
                    v = 0.0
                    for ch in range(c):
                        v += g[n, p, ch] * xt[n, rr, cc, ch]
                    gr += sr * wc * v
                    gc += sc * wr * v
                    if need_x:
                        wgt = wr * wc
                        for ch in range(c):
                            dxt[n, rr, cc, ch] += wgt * g[n, p, ch]
            drows[n, p] = gr
            dcols[n, p] = gc
    return dxt, drows, dcols

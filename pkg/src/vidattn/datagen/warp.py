"""Image warps by inverse mapping: Scaled MNIST, rotation/scaling and elastic deformation.

Every warp evaluates, for each output pixel, a fractional source coordinate
and reads it with bilinear interpolation; sources outside the image read 0.
Pixel centres sit on integer coordinates and rotations/zooms are about
((H - 1) / 2, (W - 1) / 2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

CANVAS = 64
DIGIT = 28


def warp_bilinear(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Read ``image`` [H, W] at fractional (rows, cols) with zero padding."""
    h, w = image.shape
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = np.zeros(rows.shape, dtype=np.float64)
    for dr in (0, 1):
        for dc in (0, 1):
            rr, cc = r0 + dr, c0 + dc
            valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            wgt = (fr if dr else 1 - fr) * (fc if dc else 1 - fc)
            vals = image[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
            out += np.where(valid, wgt * vals, 0.0)
    return out


def _centred_lattice(shape):
    h, w = shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ch, cw = (h - 1) / 2, (w - 1) / 2
    return rr - ch, cc - cw, ch, cw


def embed_center(digit: np.ndarray, canvas: int = CANVAS) -> np.ndarray:
    out = np.zeros((canvas, canvas), dtype=np.float64)
    h, w = digit.shape
    top, left = (canvas - h) // 2, (canvas - w) // 2
    out[top:top + h, left:left + w] = digit
    return out


@dataclass(frozen=True)
class ScaledMnistParams:
    """Random zoom and shift ranges. A zoom factor z magnifies the content z
    times about the canvas centre (z = 2 doubles the digit's extent)."""

    zoom_range: Tuple[float, float] = (1.0, 2.5)
    shift_fraction: float = 0.2


def zoom_shift(image: np.ndarray, zoom: float, shift: Tuple[float, float]) -> np.ndarray:
    """Magnify by ``zoom`` about the centre, then translate by ``shift`` = (rows, cols) pixels."""
    if zoom <= 0:
        raise ValueError(f"zoom must be positive, got {zoom}")
    dr, dc, ch, cw = _centred_lattice(image.shape)
    rows = ch + (dr - shift[0]) / zoom
    cols = cw + (dc - shift[1]) / zoom
    return np.clip(warp_bilinear(image, rows, cols), 0.0, 1.0)


def sample_zoom_shift(rng: np.random.Generator, params: ScaledMnistParams = ScaledMnistParams(),
                      canvas: int = CANVAS):
    zoom = rng.uniform(*params.zoom_range)
    limit = params.shift_fraction * canvas
    shift = (rng.uniform(-limit, limit), rng.uniform(-limit, limit))
    return zoom, shift


def scaled_mnist(digit: np.ndarray, rng: np.random.Generator,
                 params: ScaledMnistParams = ScaledMnistParams(), canvas: int = CANVAS) -> np.ndarray:
    """One Scaled MNIST image: centred embed, random zoom, random shift."""
    zoom, shift = sample_zoom_shift(rng, params, canvas)
    return zoom_shift(embed_center(digit, canvas), zoom, shift)


def scaled_mnist_set(images: np.ndarray, labels: np.ndarray, count: int, rng: np.random.Generator,
                     params: ScaledMnistParams = ScaledMnistParams(), canvas: int = CANVAS):
    """``count`` augmented 64x64 images drawn with replacement from ``images``."""
    out = np.empty((count, canvas, canvas), dtype=np.float32)
    picks = rng.integers(0, len(images), size=count)
    for n, idx in enumerate(picks):
        out[n] = scaled_mnist(images[idx], rng, params, canvas)
    return out, np.asarray(labels)[picks].astype(np.int64)


def apply_rotation_scale(canvas: np.ndarray, angle: float, scale: float) -> np.ndarray:
    """Rotate by ``angle`` radians (counter-clockwise as displayed), then scale by ``scale``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    dr, dc, ch, cw = _centred_lattice(canvas.shape)
    cos, sin = np.cos(angle), np.sin(angle)
    # inverse map: undo the scale, then the rotation
    rows = ch + (cos * dr + sin * dc) / scale
    cols = cw + (cos * dc - sin * dr) / scale
    return np.clip(warp_bilinear(canvas, rows, cols), 0.0, 1.0)


# ---------------------------------------------------------------- elastic deformation

@dataclass(frozen=True)
class ElasticParams:
    sigma: float = 10.0
    kernel: int = 7
    alpha: float = 300.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be a positive odd integer, got {self.kernel}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def displacement_field(shape, params: ElasticParams, rng: np.random.Generator):
    """(d_rows, d_cols): uniform noise in [-1, 1], Gaussian-smoothed, times alpha."""
    noise = rng.uniform(-1.0, 1.0, size=(2,) + tuple(shape))
    k = gaussian_kernel(params.kernel, params.sigma)
    d_cols = ndimage.convolve(noise[0], k, mode="constant", cval=0.0) * params.alpha
    d_rows = ndimage.convolve(noise[1], k, mode="constant", cval=0.0) * params.alpha
    return d_rows, d_cols


def warp_displacement(image: np.ndarray, d_rows: np.ndarray, d_cols: np.ndarray) -> np.ndarray:
    """out[r, c] = image[r + d_rows[r, c], c + d_cols[r, c]]."""
    h, w = image.shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.clip(warp_bilinear(image, rr + d_rows, cc + d_cols), 0.0, 1.0)


def elastic_deform(image: np.ndarray, params: ElasticParams, rng: np.random.Generator) -> np.ndarray:
    d_rows, d_cols = displacement_field(image.shape, params, rng)
    return warp_displacement(image, d_rows, d_cols)

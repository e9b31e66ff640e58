"""Augmented two-digit Moving MNIST.

Each of the 100 ordered digit pairs (d_m, d_n) gets ``sequences_per_class``
sequences. A sequence picks one exemplar of each digit, bounces both around
the canvas, and applies one rotation/scale (held for all its frames).

Randomness: every sequence owns a PCG64 stream seeded from
``SeedSequence([seed, split, class, setting])``, so generation is a pure
function of the ``DatasetSpec`` and the MNIST ordering.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .mnist import MnistSet
from .warp import CANVAS, DIGIT, ElasticParams, apply_rotation_scale, elastic_deform

MODES = ("normal", "rotation", "scaling", "both")
SPLITS = ("train", "test")
LABEL_ORDERS = ("sampled", "canonical")


@dataclass(frozen=True)
class DatasetSpec:
    mode: str = "normal"
    split: str = "train"
    sequences_per_class: int = 10
    frames: int = 5
    canvas: int = CANVAS
    velocity_range: Tuple[float, float] = (4.0, 12.0)
    rotation_range: Tuple[float, float] = (0.0, 2 * np.pi)
    scale_range: Tuple[float, float] = (0.4, 1.0)
    seed: int = 0
    label_order: str = "sampled"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}; choose from {', '.join(SPLITS)}")
        if self.label_order not in LABEL_ORDERS:
            raise ValueError(f"unknown label order {self.label_order!r}; choose from {', '.join(LABEL_ORDERS)}")
        if self.frames < 1 or self.sequences_per_class < 1:
            raise ValueError("frames and sequences_per_class must be >= 1")


@dataclass
class VideoDataset:
    """frames: uint8 [S, T, H, W] (intensity * 255, rounded); labels: uint8 [S]."""

    frames: np.ndarray
    labels: np.ndarray
    mode: str = "normal"
    seed: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def float_frames(self) -> np.ndarray:
        return self.frames.astype(np.float32) / 255.0

    def subset(self, idx) -> "VideoDataset":
        return replace(self, frames=self.frames[idx], labels=self.labels[idx])


@dataclass
class Trajectory:
    """positions/velocities: [frames, 2 digits, 2 (row, col)], top-left corners."""

    positions: np.ndarray
    velocities: np.ndarray


def bounce_step(pos: np.ndarray, vel: np.ndarray, limit: float):
    """Advance one frame; a component leaving [0, limit] is reflected and its velocity flipped."""
    pos = pos + vel
    vel = vel.copy()
    low = pos < 0
    pos[low] = -pos[low]
    vel[low] = -vel[low]
    high = pos > limit
    pos[high] = 2 * limit - pos[high]
    vel[high] = -vel[high]
    return pos, vel


def simulate_trajectory(rng: np.random.Generator, frames: int, canvas: int = CANVAS, digit_size: int = DIGIT,
                        velocity_range=(4.0, 12.0)) -> Trajectory:
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    if digit_size > canvas:
        raise ValueError(f"digit of size {digit_size} does not fit a {canvas}x{canvas} canvas")
    limit = float(canvas - digit_size)
    pos = rng.uniform(0.0, limit, size=(2, 2))
    speed = rng.uniform(*velocity_range, size=2)
    angle = rng.uniform(0.0, 2 * np.pi, size=2)
    vel = np.stack([speed * np.sin(angle), speed * np.cos(angle)], axis=1)
    positions, velocities = [pos], [vel]
    for _ in range(frames - 1):
        pos, vel = bounce_step(pos, vel, limit)
        positions.append(pos)
        velocities.append(vel)
    return Trajectory(np.stack(positions), np.stack(velocities))


def render_canvas(digits, positions, canvas: int = CANVAS) -> np.ndarray:
    """Stamp digits at (row, col) top-left positions (rounded); overlaps take the max."""
    out = np.zeros((canvas, canvas), dtype=np.float64)
    for img, (r, c) in zip(digits, positions):
        r, c = int(np.rint(r)), int(np.rint(c))
        h, w = img.shape
        if r < 0 or c < 0 or r + h > canvas or c + w > canvas:
            raise ValueError(f"digit at ({r}, {c}) with size {h}x{w} leaves the {canvas}x{canvas} canvas")
        np.maximum(out[r:r + h, c:c + w], img, out=out[r:r + h, c:c + w])
    return out


def class_label(d_m: int, d_n: int, label_order: str = "sampled") -> int:
    if label_order == "canonical":
        d_m, d_n = min(d_m, d_n), max(d_m, d_n)
    return 10 * d_m + d_n


def sequence_rng(seed: int, split: str, cls: int, setting: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, SPLITS.index(split), cls, setting])))


def transform_for_mode(mode: str, angle: float, scale: float) -> Tuple[float, float]:
    if mode == "normal":
        return 0.0, 1.0
    if mode == "rotation":
        return angle, 1.0
    if mode == "scaling":
        return 0.0, scale
    return angle, scale


def generate_sequence(spec: DatasetSpec, pools: List[np.ndarray], cls: int, setting: int):
    """Frames float64 [T, H, W], label, trajectory and the applied (angle, scale)."""
    rng = sequence_rng(spec.seed, spec.split, cls, setting)
    d_m, d_n = divmod(cls, 10)
    digits = [pools[d_m][rng.integers(len(pools[d_m]))], pools[d_n][rng.integers(len(pools[d_n]))]]
    traj = simulate_trajectory(rng, spec.frames, spec.canvas, digits[0].shape[0], spec.velocity_range)
    # both draws happen in every mode so the datasets differ only in the augmentation
    angle = rng.uniform(*spec.rotation_range)
    scale = rng.uniform(*spec.scale_range)
    angle, scale = transform_for_mode(spec.mode, angle, scale)
    frames = np.empty((spec.frames, spec.canvas, spec.canvas))
    for t in range(spec.frames):
        frame = render_canvas(digits, traj.positions[t], spec.canvas)
        if (angle, scale) != (0.0, 1.0):
            frame = apply_rotation_scale(frame, angle, scale)
        frames[t] = frame
    return frames, class_label(d_m, d_n, spec.label_order), traj, (angle, scale)


def quantize(frames: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate_dataset(spec: DatasetSpec, mnist: MnistSet) -> VideoDataset:
    pools = mnist.by_digit()
    missing = [d for d, p in enumerate(pools) if len(p) == 0]
    if missing:
        raise ValueError(f"MNIST source has no exemplars for digit class(es) {missing}")
    n = 100 * spec.sequences_per_class
    frames = np.empty((n, spec.frames, spec.canvas, spec.canvas), dtype=np.uint8)
    labels = np.empty(n, dtype=np.uint8)
    i = 0
    for cls in range(100):
        for setting in range(spec.sequences_per_class):
            seq, label, _, _ = generate_sequence(spec, pools, cls, setting)
            frames[i] = quantize(seq)
            labels[i] = label
            i += 1
    return VideoDataset(frames, labels, spec.mode, spec.seed)


def elastic_dataset(ds: VideoDataset, params: ElasticParams, seed: int) -> VideoDataset:
    """Elastically deform every frame with an independent field per frame.

    Sequence i draws its fields from ``SeedSequence([seed, i])``.
    """
    out = np.empty_like(ds.frames)
    src = ds.float_frames()
    for i in range(len(ds)):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        for t in range(ds.frames.shape[1]):
            out[i, t] = quantize(elastic_deform(src[i, t].astype(np.float64), params, rng))
    return replace(ds, frames=out)

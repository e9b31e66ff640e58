"""Two-stage training: CNN pre-training on Scaled MNIST, then an LSTM over
frozen per-frame features of Moving MNIST videos."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import functional as F
from .datagen.mnist import MnistSet
from .datagen.moving import VideoDataset
from .datagen.warp import scaled_mnist_set
from .networks import (VIDEO_CLASSES, ModelSpec, ParamStore, backbone_logits, build_backbone,
                       build_lstm, extract_features, lstm_logits, sequence_loss)
from .optim import OptState, adadelta_step, rmsprop_step
from .tensor import Tensor, backward, no_grad, zero_grad

log = logging.getLogger(__name__)

UNIFORM_LOSS = float(np.log(VIDEO_CLASSES))


@dataclass
class TrainConfig:
    stage: str = "video"
    epochs: int = 10
    batch_size: int = 50
    lr: float = 1e-3
    repetitions: int = 3
    seed: int = 0
    # step multiplier for the STN localization net during pre-training
    loc_lr_scale: float = 0.1

    def __post_init__(self):
        if self.stage not in ("pretrain", "video"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.repetitions < 1:
            raise ValueError("epochs, batch_size, repetitions must be >= 1 and lr > 0")
        if self.loc_lr_scale <= 0:
            raise ValueError(f"loc_lr_scale must be positive, got {self.loc_lr_scale}")

    @classmethod
    def pretrain_defaults(cls, **kw) -> "TrainConfig":
        base = dict(stage="pretrain", epochs=10, batch_size=16, lr=1.0, repetitions=1)
        base.update(kw)
        return cls(**base)

    @classmethod
    def video_defaults(cls, **kw) -> "TrainConfig":
        base = dict(stage="video", epochs=10, batch_size=50, lr=1e-3, repetitions=3)
        base.update(kw)
        return cls(**base)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


# ---------------------------------------------------------------- stage 1

def scaled_mnist_splits(train: MnistSet, test: MnistSet, n_train: int = 10000, n_test: int = 2000, seed: int = 0):
    """Scaled MNIST train/test images drawn from disjoint digit pools, each from its own stream."""
    streams = [np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 100 + i]))) for i in (0, 1)]
    xtr, ytr = scaled_mnist_set(train.images, train.labels, n_train, streams[0])
    xte, yte = scaled_mnist_set(test.images, test.labels, n_test, streams[1])
    return xtr, ytr, xte, yte


@dataclass
class PretrainResult:
    params: ParamStore
    epoch_loss: List[float]
    test_loss: float
    test_accuracy: float


def evaluate_images(params: ParamStore, images: np.ndarray, labels: np.ndarray,
                    batch_size: int = 100) -> Tuple[float, float]:
    """(mean cross entropy, accuracy %) of the backbone's own classifier."""
    total, correct = 0.0, 0
    with no_grad():
        for i in range(0, len(labels), batch_size):
            x = Tensor(images[i:i + batch_size, None].astype(np.float32))
            logits = backbone_logits(params, x).data.astype(np.float64)
            y = labels[i:i + batch_size]
            logp = F.log_softmax_np(logits)
            total += -logp[np.arange(len(y)), y].sum()
            correct += int((logits.argmax(axis=1) == y).sum())
    return total / len(labels), 100.0 * correct / len(labels)


def pretrain(spec: ModelSpec, train_images: np.ndarray, train_labels: np.ndarray,
             test_images: np.ndarray, test_labels: np.ndarray, cfg: TrainConfig,
             progress: Optional[Callable[[str], None]] = None) -> PretrainResult:
    """Adadelta on the 10-way classifier; returns the trained store and test metrics."""
    if spec.num_classes != 10:
        raise ValueError(f"pre-training is 10-way, got num_classes={spec.num_classes}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    params = build_backbone(spec, rng)
    shuffle = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    # a full-rate localization net tends to push the sampling grid off the image, where its gradient dies
    lr_scale = {k: cfg.loc_lr_scale for k in params if k.startswith("loc.")}
    state: Optional[OptState] = None
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(train_labels), cfg.batch_size, shuffle):
            x = Tensor(train_images[idx, None].astype(np.float32))
            loss, _ = F.softmax_cross_entropy(backbone_logits(params, x), train_labels[idx])
            zero_grad(params.values())
            grads = backward(loss, params)
            state = adadelta_step(params, grads, state, lr=cfg.lr, lr_scale=lr_scale)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if progress:
            progress(f"pretrain {spec.variant} epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.4f}")
    zero_grad(params.values())
    test_loss, test_acc = evaluate_images(params, test_images, test_labels)
    return PretrainResult(params, history, test_loss, test_acc)


# ---------------------------------------------------------------- stage 2

def frame_metrics(probs: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """Mean per-frame cross entropy and frame accuracy % for probs [S, T, K]."""
    labels = np.asarray(labels, dtype=np.int64)
    frame_labels = np.broadcast_to(labels[:, None], probs.shape[:2])
    picked = np.take_along_axis(probs, frame_labels[..., None], axis=-1)[..., 0]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    acc = 100.0 * float((probs.argmax(axis=-1) == frame_labels).mean())
    return loss, acc


def lstm_probabilities(features: np.ndarray, lstm: ParamStore, batch_size: int = 200) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(features), batch_size):
            logits = lstm_logits(Tensor(features[i:i + batch_size]), lstm).data
            out.append(F.softmax_np(logits.astype(np.float64)))
    return np.concatenate(out)


def evaluate_features(features: np.ndarray, labels: np.ndarray, lstm: ParamStore) -> Tuple[float, float]:
    return frame_metrics(lstm_probabilities(features, lstm), labels)


def evaluate(backbone: ParamStore, lstm: ParamStore, dataset: VideoDataset) -> Tuple[float, float]:
    """(mean per-frame cross entropy, frame accuracy %) on a video dataset."""
    feats = extract_features(backbone, dataset.float_frames())
    return evaluate_features(feats, dataset.labels, lstm)


def uniform_lstm(input_dim: int) -> ParamStore:
    """An LSTM whose head is all zeros, i.e. a uniform predictor over 100 classes."""
    store = build_lstm(input_dim, np.random.default_rng(0))
    store["head.w"].data[:] = 0
    store["head.b"].data[:] = 0
    return store


@dataclass
class RepetitionResult:
    lstm: ParamStore
    epoch_loss: List[float]
    test_loss: float
    test_accuracy: float
    steps: int = 0


@dataclass
class VideoTrainResult:
    repetitions: List[RepetitionResult]
    mean_loss: float
    mean_accuracy: float

    @property
    def curves(self) -> np.ndarray:
        return np.array([r.epoch_loss for r in self.repetitions])


def train_lstm(train_feats: np.ndarray, train_labels: np.ndarray, cfg: TrainConfig, seed_key) -> RepetitionResult:
    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed_key) + [0])))
    shuffle = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed_key) + [1])))
    lstm = build_lstm(train_feats.shape[-1], init_rng)
    state: Optional[OptState] = None
    history = []
    for _ in range(cfg.epochs):
        losses = []
        for idx in _batches(len(train_labels), cfg.batch_size, shuffle):
            loss, _ = sequence_loss(Tensor(train_feats[idx]), train_labels[idx], lstm)
            zero_grad(lstm.values())
            grads = backward(loss, lstm)
            state = rmsprop_step(lstm, grads, state, lr=cfg.lr)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    zero_grad(lstm.values())
    return RepetitionResult(lstm, history, float("nan"), float("nan"), state.steps if state else 0)


def train_video_classifier(backbone: ParamStore, train: VideoDataset, cfg: TrainConfig,
                           test: Optional[VideoDataset] = None,
                           progress: Optional[Callable[[str], None]] = None,
                           train_feats: Optional[np.ndarray] = None,
                           test_feats: Optional[np.ndarray] = None) -> VideoTrainResult:
    """Train ``cfg.repetitions`` LSTMs on frozen backbone features and average their test metrics.

    The backbone is evaluated without a tape, so its tensors are never updated.
    """
    if train_feats is None:
        train_feats = extract_features(backbone, train.float_frames())
    if test is not None and test_feats is None:
        test_feats = extract_features(backbone, test.float_frames())
    labels = train.labels.astype(np.int64)
    reps = []
    for r in range(cfg.repetitions):
        res = train_lstm(train_feats, labels, cfg, (cfg.seed, r))
        if test is not None:
            res.test_loss, res.test_accuracy = evaluate_features(test_feats, test.labels, res.lstm)
        reps.append(res)
        if progress:
            progress(f"repetition {r + 1}/{cfg.repetitions}: final train loss {res.epoch_loss[-1]:.4f}"
                     + (f", test loss {res.test_loss:.4f}, accuracy {res.test_accuracy:.2f}%" if test is not None else ""))
    mean_loss = float(np.mean([r.test_loss for r in reps])) if test is not None else float("nan")
    mean_acc = float(np.mean([r.test_accuracy for r in reps])) if test is not None else float("nan")
    return VideoTrainResult(reps, mean_loss, mean_acc)

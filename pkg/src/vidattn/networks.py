"""CNN backbones, the LSTM sequence classifier and checkpoint persistence.

Backbone layouts (k = 5 everywhere, 'same' padding, relu after every conv
and after fc1)::

    lenet: conv(c1) -> pool(2) -> conv(c2) -> pool(2) -> fc(F) -> fc(classes)
    stn:   stn(32x32) -> conv(c1) -> conv(c2) -> fc(F) -> fc(classes)
    dcn:   [offset conv -> deformable conv](c1) -> [offset conv -> deformable conv](c2)
           -> fc(F) -> fc(classes)

The full profile (c1, c2, F) = (20, 50, 500) reproduces the published LeNet
parameter total at 64x64 input exactly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from . import functional as F
from .attention import (IDENTITY_THETA, STN_OUTPUT_SIZE, deformable_conv, loc_param_shapes,
                        offset_channels, offset_conv_forward, stn_forward)
from .binio import FormatError, read_named_tensors, write_named_tensors
from .init import orthogonal_init, xavier_uniform_init
from .tensor import Tensor, as_tensor, no_grad

VARIANTS = ("lenet", "stn", "dcn")
KERNEL = 5
FEATURE_HIDDEN = 8
VIDEO_CLASSES = 100


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    input_size: Tuple[int, int] = (64, 64)
    conv_channels: Tuple[int, int] = (20, 50)
    fc_width: int = 500
    num_classes: int = 10
    first_stride: int = 1  # dcn only: stride of the first deformable conv

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.first_stride != 1 and self.variant != "dcn":
            raise ValueError("first_stride only applies to the dcn variant")

    @classmethod
    def full(cls, variant: str, num_classes: int = 10) -> "ModelSpec":
        return cls(variant, num_classes=num_classes)

    @classmethod
    def reduced(cls, variant: str, num_classes: int = 10) -> "ModelSpec":
        """CPU-sized profile: channels 8/16, fc 128, stride-2 first deformable conv."""
        return cls(variant, conv_channels=(8, 16), fc_width=128, num_classes=num_classes,
                   first_stride=2 if variant == "dcn" else 1)

    @classmethod
    def profile(cls, name: str, variant: str) -> "ModelSpec":
        if name == "full":
            return cls.full(variant)
        if name == "reduced":
            return cls.reduced(variant)
        raise ValueError(f"unknown profile {name!r}; expected 'full' or 'reduced'")

    # meta echo stored in checkpoints as 1-element tensors
    def to_meta(self) -> Dict[str, float]:
        return {
            "variant": float(VARIANTS.index(self.variant)),
            "input_h": float(self.input_size[0]), "input_w": float(self.input_size[1]),
            "c1": float(self.conv_channels[0]), "c2": float(self.conv_channels[1]),
            "fc_width": float(self.fc_width), "num_classes": float(self.num_classes),
            "first_stride": float(self.first_stride),
        }

    @classmethod
    def from_meta(cls, meta: Mapping[str, float]) -> "ModelSpec":
        return cls(VARIANTS[int(meta["variant"])], (int(meta["input_h"]), int(meta["input_w"])),
                   (int(meta["c1"]), int(meta["c2"])), int(meta["fc_width"]),
                   int(meta["num_classes"]), int(meta["first_stride"]))


class ParamStore(dict):
    """Ordered name -> Tensor table; ``spec`` records what built it."""

    def __init__(self, *args, spec=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.spec = spec

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def freeze(self) -> "ParamStore":
        for t in self.values():
            t.requires_grad = False
        return self

    def copy(self) -> "ParamStore":
        return ParamStore({k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.items()},
                          spec=self.spec)


def count_params(params: Mapping[str, Tensor]) -> int:
    return int(sum(int(np.prod(t.shape)) for t in params.values()))


def _feature_map_size(spec: ModelSpec) -> Tuple[int, int]:
    h, w = spec.input_size
    if spec.variant == "lenet":
        return h // 4, w // 4
    if spec.variant == "stn":
        return STN_OUTPUT_SIZE, STN_OUTPUT_SIZE
    s = spec.first_stride
    return math.ceil(h / s), math.ceil(w / s)


def backbone_shapes(spec: ModelSpec) -> Dict[str, tuple]:
    c1, c2 = spec.conv_channels
    k = KERNEL
    shapes: Dict[str, tuple] = {}
    if spec.variant == "stn":
        shapes.update(loc_param_shapes(*spec.input_size))
    if spec.variant == "dcn":
        shapes["conv1.offset.w"] = (offset_channels(k), 1, k, k)
        shapes["conv1.offset.b"] = (offset_channels(k),)
    shapes["conv1.w"] = (c1, 1, k, k)
    shapes["conv1.b"] = (c1,)
    if spec.variant == "dcn":
        shapes["conv2.offset.w"] = (offset_channels(k), c1, k, k)
        shapes["conv2.offset.b"] = (offset_channels(k),)
    shapes["conv2.w"] = (c2, c1, k, k)
    shapes["conv2.b"] = (c2,)
    fh, fw = _feature_map_size(spec)
    shapes["fc1.w"] = (spec.fc_width, c2 * fh * fw)
    shapes["fc1.b"] = (spec.fc_width,)
    shapes["fc2.w"] = (spec.num_classes, spec.fc_width)
    shapes["fc2.b"] = (spec.num_classes,)
    return shapes


def param_ledger(spec: ModelSpec) -> Iterator[Tuple[str, int]]:
    """(layer, trainable count) per layer, weights and bias together."""
    layers: Dict[str, int] = {}
    for name, shape in backbone_shapes(spec).items():
        layer = name.rsplit(".", 1)[0]
        layers[layer] = layers.get(layer, 0) + int(np.prod(shape))
    return iter(layers.items())


def _fans(shape: tuple) -> Tuple[int, int]:
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    return shape[1], shape[0]


def build_backbone(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
    """Xavier-uniform weights, zero biases; the localization head starts at the
    identity transform and offset convolutions start at zero."""
    store = ParamStore(spec=spec)
    for name, shape in backbone_shapes(spec).items():
        if name.endswith(".b") or ".offset." in name or name == "loc.fc2.w":
            arr = np.zeros(shape, dtype=dtype)
        else:
            arr = xavier_uniform_init(shape, *_fans(shape), rng=rng).astype(dtype)
        store[name] = Tensor(arr, requires_grad=True, name=name)
    if spec.variant == "stn":
        store["loc.fc2.b"].data[:] = IDENTITY_THETA.reshape(-1)
    return store


def _check_input(spec: ModelSpec, x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 3:
        x = F.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[1:] != (1,) + tuple(spec.input_size):
        raise ValueError(f"{spec.variant} backbone expects frames [N, 1, {spec.input_size[0]}, "
                         f"{spec.input_size[1]}], got {x.shape}")
    return x


def backbone_features(params: Mapping[str, Tensor], x: Tensor, spec: Optional[ModelSpec] = None) -> Tensor:
    """Activations of fc1 (post-relu), shape [N, fc_width]."""
    spec = spec or params.spec
    x = _check_input(spec, x)
    p = params
    if spec.variant == "lenet":
        h = F.maxpool2d(F.relu(F.conv2d(x, p["conv1.w"], p["conv1.b"])), 2)
        h = F.maxpool2d(F.relu(F.conv2d(h, p["conv2.w"], p["conv2.b"])), 2)
    elif spec.variant == "stn":
        h = stn_forward(x, p)
        h = F.relu(F.conv2d(h, p["conv1.w"], p["conv1.b"]))
        h = F.relu(F.conv2d(h, p["conv2.w"], p["conv2.b"]))
    else:
        s = spec.first_stride
        off = offset_conv_forward(x, p["conv1.offset.w"], p["conv1.offset.b"], KERNEL, stride=s)
        h = F.relu(deformable_conv(x, p["conv1.w"], p["conv1.b"], off, stride=s))
        off = offset_conv_forward(h, p["conv2.offset.w"], p["conv2.offset.b"], KERNEL)
        h = F.relu(deformable_conv(h, p["conv2.w"], p["conv2.b"], off))
    return F.relu(F.dense(F.flatten(h), p["fc1.w"], p["fc1.b"]))


def backbone_logits(params: Mapping[str, Tensor], x: Tensor, spec: Optional[ModelSpec] = None) -> Tensor:
    feats = backbone_features(params, x, spec)
    return F.dense(feats, params["fc2.w"], params["fc2.b"])


def extract_features(params: Mapping[str, Tensor], frames, batch_size: int = 100,
                     spec: Optional[ModelSpec] = None) -> np.ndarray:
    """Frozen feature extraction: frames [..., (1,) H, W] -> [..., fc_width].

    Runs without recording a tape, so no gradient can reach the backbone.
    """
    spec = spec or params.spec
    frames = np.asarray(frames)
    h, w = spec.input_size
    if frames.shape[-2:] != (h, w):
        raise ValueError(f"frames must end in ({h}, {w}), got {frames.shape}")
    # a singleton channel axis right before (H, W) is not a batch axis
    lead = frames.shape[:-3] if frames.ndim >= 3 and frames.shape[-3] == 1 else frames.shape[:-2]
    flat = frames.reshape(-1, 1, h, w).astype(np.float32)
    out = np.empty((flat.shape[0], spec.fc_width), dtype=np.float32)
    with no_grad():
        for i in range(0, flat.shape[0], batch_size):
            out[i:i + batch_size] = backbone_features(params, Tensor(flat[i:i + batch_size]), spec).data
    return out.reshape(lead + (spec.fc_width,))


# ---------------------------------------------------------------- LSTM

class LstmState(NamedTuple):
    h: Tensor
    c: Tensor


GATES = ("f", "i", "g", "o")


def lstm_shapes(input_dim: int, hidden: int = FEATURE_HIDDEN, num_classes: int = VIDEO_CLASSES) -> Dict[str, tuple]:
    shapes = {}
    for gname in GATES:
        shapes[f"lstm.W_{gname}"] = (hidden, hidden + input_dim)
        shapes[f"lstm.b_{gname}"] = (hidden,)
    shapes["head.w"] = (num_classes, hidden)
    shapes["head.b"] = (num_classes,)
    return shapes


def build_lstm(input_dim: int, rng: np.random.Generator, hidden: int = FEATURE_HIDDEN,
               num_classes: int = VIDEO_CLASSES, dtype=np.float32) -> ParamStore:
    """Gate matrices act on [h, x]: columns [:hidden] are the recurrent kernel
    (orthogonal), columns [hidden:] the input kernel (Xavier, fans taken over
    all four gates stacked). Biases start at zero."""
    shapes = lstm_shapes(input_dim, hidden, num_classes)
    kernel = xavier_uniform_init((input_dim, 4 * hidden), input_dim, 4 * hidden, rng=rng)
    recurrent = orthogonal_init((hidden, 4 * hidden), rng=rng)
    store = ParamStore(spec={"input_dim": input_dim, "hidden": hidden, "num_classes": num_classes})
    for gi, gname in enumerate(GATES):
        W = np.concatenate([recurrent[:, gi * hidden:(gi + 1) * hidden].T,
                            kernel[:, gi * hidden:(gi + 1) * hidden].T], axis=1)
        store[f"lstm.W_{gname}"] = Tensor(W.astype(dtype), requires_grad=True)
        store[f"lstm.b_{gname}"] = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
    store["head.w"] = Tensor(xavier_uniform_init(shapes["head.w"], hidden, num_classes, rng=rng).astype(dtype),
                             requires_grad=True)
    store["head.b"] = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
    return store


def zero_state(batch: int, hidden: int = FEATURE_HIDDEN, dtype=np.float32) -> LstmState:
    return LstmState(Tensor(np.zeros((batch, hidden), dtype=dtype)), Tensor(np.zeros((batch, hidden), dtype=dtype)))


def lstm_step(x: Tensor, state: LstmState, p: Mapping[str, Tensor]) -> LstmState:
    """One LSTM step on x [N, input] (or [input]) with state [N, hidden]."""
    x = as_tensor(x)
    hidden = p["lstm.W_f"].shape[0]
    squeeze = x.ndim == 1
    if squeeze:
        x = F.reshape(x, (1, -1))
        state = LstmState(F.reshape(state.h, (1, -1)), F.reshape(state.c, (1, -1)))
    if x.shape[1] + hidden != p["lstm.W_f"].shape[1]:
        raise ValueError(f"lstm_step: input dimension {x.shape[1]} does not match gate matrices "
                         f"{p['lstm.W_f'].shape} (hidden {hidden})")
    if state.h.shape != (x.shape[0], hidden) or state.c.shape != (x.shape[0], hidden):
        raise ValueError(f"lstm_step: state shapes {state.h.shape}/{state.c.shape} != {(x.shape[0], hidden)}")
    hx = F.concat([state.h, x], axis=1)
    f = F.sigmoid(F.dense(hx, p["lstm.W_f"], p["lstm.b_f"]))
    i = F.sigmoid(F.dense(hx, p["lstm.W_i"], p["lstm.b_i"]))
    g = F.tanh(F.dense(hx, p["lstm.W_g"], p["lstm.b_g"]))
    o = F.sigmoid(F.dense(hx, p["lstm.W_o"], p["lstm.b_o"]))
    c = F.add(F.mul(f, state.c), F.mul(i, g))
    h = F.mul(o, F.tanh(c))
    if squeeze:
        return LstmState(F.reshape(h, (hidden,)), F.reshape(c, (hidden,)))
    return LstmState(h, c)


def lstm_logits(features: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Per-frame class scores [N, T, K] for feature sequences [N, T, F]."""
    features = as_tensor(features)
    n, t = features.shape[:2]
    hidden = p["lstm.W_f"].shape[0]
    state = zero_state(n, hidden, dtype=features.dtype)
    outs = []
    for step in range(t):
        state = lstm_step(F.take(features, step, axis=1), state, p)
        outs.append(F.dense(state.h, p["head.w"], p["head.b"]))
    return F.stack(outs, axis=1)


def sequence_loss(features: Tensor, labels, p: Mapping[str, Tensor]):
    """Mean per-frame cross entropy against the sequence label; returns (loss, probs [N,T,K])."""
    logits = lstm_logits(features, p)
    labels = np.asarray(labels, dtype=np.int64)
    frame_labels = np.repeat(labels[:, None], logits.shape[1], axis=1)
    return F.softmax_cross_entropy(logits, frame_labels)


def classify_sequence(backbone: ParamStore, lstm: Mapping[str, Tensor], video) -> np.ndarray:
    """Class probabilities per frame, [t, 100], for one video [t, (1,) H, W]."""
    video = np.asarray(video, dtype=np.float32)
    if video.ndim not in (3, 4) or video.shape[0] < 1:
        raise ValueError(f"video must be [t, H, W] or [t, 1, H, W] with t >= 1, got {video.shape}")
    feats = extract_features(backbone, video.reshape((video.shape[0],) + video.shape[-2:]))
    with no_grad():
        logits = lstm_logits(Tensor(feats[None]), lstm).data[0]
    return F.softmax_np(logits.astype(np.float64))


# ---------------------------------------------------------------- persistence

META_PREFIX = "__meta__."


class ShapeMismatchError(FormatError):
    """Checkpoint contents do not fit the requested model."""


def save_checkpoint(params: ParamStore, path, meta: Optional[Mapping[str, float]] = None) -> None:
    tensors = {name: t.data for name, t in params.items()}
    echo = dict(meta or {})
    if isinstance(params.spec, ModelSpec):
        echo.update(params.spec.to_meta())
        echo["kind"] = 0.0
    elif isinstance(params.spec, dict):
        echo.update({k: float(v) for k, v in params.spec.items()})
        echo["kind"] = 1.0
    for key, value in echo.items():
        tensors[META_PREFIX + key] = np.array([value], dtype=np.float32)
    write_named_tensors(path, tensors)


def _split_meta(raw: Mapping[str, np.ndarray]):
    meta = {k[len(META_PREFIX):]: float(v.reshape(-1)[0]) for k, v in raw.items() if k.startswith(META_PREFIX)}
    tensors = {k: v for k, v in raw.items() if not k.startswith(META_PREFIX)}
    return tensors, meta


def _verify(tensors: Mapping[str, np.ndarray], expected: Mapping[str, tuple], what: str) -> None:
    for name, shape in expected.items():
        if name not in tensors:
            raise ShapeMismatchError(f"tensor {name!r} required by {what} is missing from the checkpoint")
        if tuple(tensors[name].shape) != tuple(shape):
            raise ShapeMismatchError(f"tensor {name!r}: checkpoint shape {tuple(tensors[name].shape)} "
                                     f"!= {what} shape {tuple(shape)}")
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise ShapeMismatchError(f"checkpoint has tensors unknown to {what}: {', '.join(extra)}")


def load_checkpoint(path, spec: Optional[ModelSpec] = None) -> ParamStore:
    """Load a backbone or LSTM checkpoint.

    With ``spec`` given, every tensor is checked against that model's shapes.
    """
    tensors, meta = _split_meta(read_named_tensors(path))
    if spec is not None:
        _verify(tensors, backbone_shapes(spec), f"{spec.variant} spec")
        store_spec = spec
    elif meta.get("kind") == 0.0:
        store_spec = ModelSpec.from_meta(meta)
        _verify(tensors, backbone_shapes(store_spec), f"{store_spec.variant} spec")
    elif meta.get("kind") == 1.0:
        store_spec = {k: int(meta[k]) for k in ("input_dim", "hidden", "num_classes")}
        _verify(tensors, lstm_shapes(**store_spec), "lstm spec")
    else:
        store_spec = None
    return ParamStore({k: Tensor(v) for k, v in tensors.items()}, spec=store_spec)

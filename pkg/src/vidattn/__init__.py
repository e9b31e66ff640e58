"""Attention-augmented CNN-LSTM digit-video classifiers on a small numpy autodiff core."""
__version__ = "0.1.0"

from .networks import ModelSpec, ParamStore, build_backbone, build_lstm, count_params, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, no_grad

__all__ = ["ModelSpec", "ParamStore", "Tensor", "backward", "build_backbone", "build_lstm", "count_params",
           "load_checkpoint", "no_grad", "save_checkpoint", "__version__"]

"""Interpretable sarcasm detection: stacked multi-head self-attention
feeding a bidirectional GRU, on a from-scratch autodiff tensor core."""

from .tensor import Tensor, backward, grad_check
from .model import ModelConfig, forward, init_params
from .metrics import evaluate
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "grad_check", "ModelConfig", "forward",
           "init_params", "evaluate", "KERNEL_BACKEND", "__version__"]

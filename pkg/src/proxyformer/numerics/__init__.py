"""Float64 tensors, reverse-mode autodiff, and attention primitives."""

from . import ops
from .gradcheck import GradCheckReport, OracleError, finite_diff_check
from .nn import (AttentionConfig, Conv2d, LayerNorm, Linear, MLP, Module, MultiHeadAttention,
                 multi_head_attention)
from .ops import layer_norm, softmax
from .tensor import Parameter, Tensor, backward, grad_enabled, no_grad

__all__ = [
    "AttentionConfig", "Conv2d", "GradCheckReport", "LayerNorm", "Linear", "MLP", "Module",
    "MultiHeadAttention", "OracleError", "Parameter", "Tensor", "backward", "finite_diff_check",
    "grad_enabled", "layer_norm", "multi_head_attention", "no_grad", "ops", "softmax",
]

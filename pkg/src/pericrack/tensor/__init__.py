"""Dense tensors with reverse-mode autodiff, layers, losses and ADAM."""
from .core import Tensor, as_tensor, grad_enabled, no_grad, parameter
from .gradcheck import GradCheckReport, grad_check, grad_check_report
from .optim import Adam, AdamState, adam_step
from . import checkpoint, ops
from .ops import (add_relu, bce, bce_with_logits, concat, conv2d, conv2d_shape, cross_entropy, exp, flatten, gather_points,
                  gaussian_kl, linear, linear_relu, log, log_softmax, maxpool, relu, reparam_sample, reshape, sigmoid,
                  softmax, softplus, square)

__all__ = [
    "Tensor", "as_tensor", "grad_enabled", "no_grad", "parameter", "GradCheckReport", "grad_check",
    "grad_check_report", "Adam", "AdamState", "adam_step", "add_relu", "checkpoint", "ops", "bce", "bce_with_logits", "concat", "conv2d", "conv2d_shape",
    "cross_entropy", "exp", "flatten", "gather_points", "gaussian_kl", "linear", "linear_relu", "log", "log_softmax",
    "maxpool", "relu", "reparam_sample", "reshape", "sigmoid", "softmax", "softplus", "square",
]

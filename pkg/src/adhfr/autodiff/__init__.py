"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from . import functional
from .gradcheck import grad_check, max_relative_error, primitive_suite
from .nn import Conv2d, InstanceNorm2d, Linear, Module, ResidualBlock, frozen
from .optim import Adam
from .tensor import NumericalError, OpNode, ShapeError, Tensor, backward, no_grad

__all__ = [
    "Adam",
    "Conv2d",
    "InstanceNorm2d",
    "Linear",
    "Module",
    "NumericalError",
    "OpNode",
    "ResidualBlock",
    "ShapeError",
    "Tensor",
    "backward",
    "frozen",
    "functional",
    "grad_check",
    "max_relative_error",
    "no_grad",
    "primitive_suite",
]

"""Autodiff tensor, layers, and network building blocks."""

from .tensor import Tensor, concat, softmax, stack

__all__ = ["Tensor", "concat", "softmax", "stack"]

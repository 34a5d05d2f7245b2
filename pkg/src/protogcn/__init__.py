"""Prototype-reconstructed graph convolutions for skeleton action recognition,
on a small numpy autodiff engine."""
from .backbone import BackboneConfig, ProtoGCN
from .kernels import BACKEND
from .tensor import DimensionError, NumericError, Tensor, no_grad

__all__ = ["BACKEND", "BackboneConfig", "DimensionError", "NumericError", "ProtoGCN", "Tensor", "no_grad"]
__version__ = "0.1.0"

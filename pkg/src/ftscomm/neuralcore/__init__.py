from . import layers
from . import tensor as F
from .gradcheck import GradCheckError, GradReport, check_primitives, grad_check
from .params import ParamStore, orthogonal, xavier_uniform
from .tensor import Tensor, as_tensor, conv_out_len

__all__ = [
    "F",
    "GradCheckError",
    "GradReport",
    "ParamStore",
    "Tensor",
    "as_tensor",
    "check_primitives",
    "conv_out_len",
    "grad_check",
    "layers",
    "orthogonal",
    "xavier_uniform",
]

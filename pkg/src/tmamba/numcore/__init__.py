"""Small float64 autodiff engine used by every model component."""

from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    adaptive_mean_pool1d,
    add,
    concat,
    div,
    exp,
    flip,
    grad_enabled,
    layer_norm,
    linear,
    log,
    log_softmax,
    make_node,
    matmul,
    mul,
    neg,
    no_grad,
    pad_last,
    permute,
    reshape,
    sigmoid,
    silu,
    softmax,
    softplus,
    sqrt,
    sub,
    take,
    tmax,
    tmean,
    tsum,
)
from .conv import conv_nd, depthwise_conv1d, upsample_nearest
from .fft import (
    as_pair,
    cmul,
    fft1d,
    fft_complex,
    ifft1d,
    imag_part,
    real_part,
)
from .gradcheck import grad_check

__all__ = [
    "GraphError",
    "NonFiniteError",
    "Tensor",
    "adaptive_mean_pool1d",
    "add",
    "as_pair",
    "cmul",
    "concat",
    "conv_nd",
    "depthwise_conv1d",
    "div",
    "exp",
    "fft1d",
    "fft_complex",
    "flip",
    "grad_check",
    "grad_enabled",
    "ifft1d",
    "imag_part",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "make_node",
    "matmul",
    "mul",
    "neg",
    "no_grad",
    "pad_last",
    "permute",
    "real_part",
    "reshape",
    "sigmoid",
    "silu",
    "softmax",
    "softplus",
    "sqrt",
    "sub",
    "take",
    "tmax",
    "tmean",
    "tsum",
    "upsample_nearest",
]

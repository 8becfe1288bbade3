from .functional import (
    attention_weights,
    avg_pool2x2,
    batch_norm,
    bilinear_resize,
    conv2d,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    multi_head_self_attention,
    relu,
    sigmoid,
    softmax,
)
from .gradcheck import finite_diff_grad, max_relative_error, relative_error
from .layers import (
    MLP,
    BatchNorm2d,
    Conv2d,
    ConvBNReLU,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
)
from .tensor import (
    Parameter,
    Tensor,
    backward,
    concat,
    exp,
    log,
    matmul,
    no_grad,
    reshape,
    transpose,
)

__all__ = [
    "Tensor", "Parameter", "backward", "no_grad", "concat", "exp", "log", "matmul",
    "reshape", "transpose", "conv2d", "batch_norm", "layer_norm", "global_avg_pool",
    "avg_pool2x2", "bilinear_resize", "relu", "sigmoid", "softmax", "gelu", "linear",
    "attention_weights", "multi_head_self_attention", "finite_diff_grad",
    "max_relative_error", "relative_error", "Module", "Conv2d", "BatchNorm2d",
    "ConvBNReLU", "Linear", "LayerNorm", "MultiHeadSelfAttention", "MLP",
]

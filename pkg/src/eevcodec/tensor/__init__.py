"""Small deterministic tensor engine with reverse-mode gradients."""

from . import ops
from .core import (
    BackwardError,
    GradTape,
    NonFiniteError,
    ShapeError,
    Tensor,
    TensorError,
    backward,
)
from .gradcheck import grad_check
from .layerspec import LayerSpec, LayerSpecError, canonical, parse_layer_spec
from .nn import Adam, Conv2d, Deconv2d, LayerRecord, Module
from .ops import (
    avg_pool2,
    bilinear_warp,
    concat,
    conv2d,
    deconv2d,
    global_avg_pool,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)

__all__ = [
    "Adam", "BackwardError", "Conv2d", "Deconv2d", "GradTape", "LayerRecord", "LayerSpec",
    "LayerSpecError", "Module", "NonFiniteError", "ShapeError", "Tensor", "TensorError",
    "avg_pool2", "backward", "bilinear_warp", "canonical", "concat", "conv2d", "deconv2d",
    "global_avg_pool", "grad_check", "leaky_relu", "ops", "parse_layer_spec", "relu",
    "sigmoid", "tanh",
]

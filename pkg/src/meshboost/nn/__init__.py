"""Small deterministic numpy neural-network toolkit (forward + analytic backward)."""

from .layers import (
    Conv2d,
    Dense,
    MaxPoolPoints,
    PointMLP,
    ReLU,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    max_pool_points,
    max_pool_points_backward,
    pointwise_mlp_forward,
    upsample_nearest,
    upsample_nearest_backward,
)
from .optim import Optimizer, optimizer_step
from .weights import NetworkWeights, WeightsFormatError, load_weights, save_weights
from .gradcheck import numeric_grad, relative_error

__all__ = [
    "Conv2d", "Dense", "MaxPoolPoints", "PointMLP", "ReLU",
    "conv2d_backward", "conv2d_forward", "dense_backward", "dense_forward",
    "max_pool_points", "max_pool_points_backward", "pointwise_mlp_forward",
    "upsample_nearest", "upsample_nearest_backward",
    "Optimizer", "optimizer_step",
    "NetworkWeights", "WeightsFormatError", "load_weights", "save_weights",
    "numeric_grad", "relative_error",
]

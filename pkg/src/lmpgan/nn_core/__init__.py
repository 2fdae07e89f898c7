"""Small deterministic NumPy network engine (double precision)."""
from .layers import ShapeError
from .network import (
    Cache,
    LayerSpec,
    NetworkSpec,
    NetworkState,
    NonFiniteGradientError,
    StaleCacheError,
    add_grads,
    backward,
    batchnorm,
    conv2d,
    conv2d_transpose,
    dense,
    dropout,
    forward,
    init_params,
    leaky_relu,
    param_count,
    sgd_step,
    simple,
    update_running_stats,
)

__all__ = [
    "Cache", "LayerSpec", "NetworkSpec", "NetworkState", "NonFiniteGradientError",
    "ShapeError", "StaleCacheError", "add_grads", "backward", "batchnorm", "conv2d",
    "conv2d_transpose", "dense", "dropout", "forward", "init_params", "leaky_relu",
    "param_count", "sgd_step", "simple", "update_running_stats",
]

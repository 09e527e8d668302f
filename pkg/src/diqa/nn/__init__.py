"""From-scratch CNN building blocks on numpy arrays."""

from .checkpoint import (
    BadMagicError,
    CheckpointError,
    TruncatedCheckpointError,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .functional import (
    ShapeError,
    batchnorm_forward,
    conv2d,
    conv_output_size,
    dense,
    relu,
    softmax,
    softmax_cross_entropy,
)
from .network import (
    CONVNET4,
    RESNET10,
    Backprop,
    Network,
    backprop,
    build_convnet4,
    build_network,
    build_resnet10lite,
    forward,
    weighted_layer_count,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "Backprop", "BadMagicError", "CONVNET4", "CheckpointError", "Network", "RESNET10",
    "ShapeError", "TruncatedCheckpointError", "VersionMismatchError", "adam_step", "backprop",
    "batchnorm_forward", "build_convnet4", "build_network", "build_resnet10lite", "conv2d",
    "conv_output_size", "dense", "forward", "load_checkpoint", "relu", "save_checkpoint", "softmax",
    "softmax_cross_entropy", "weighted_layer_count",
]

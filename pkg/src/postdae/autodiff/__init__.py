from .layers import LayerSpec, Sequential, init_params
from .ops import (
    ShapeError,
    conv2d,
    dense,
    flatten,
    maxpool2x2,
    relu,
    sigmoid,
    soft_dice_loss,
    softmax_channels,
    unflatten,
    upconv,
    upsample2x,
)
from .optim import AdamState, TrainingError, adam_step
from .tensor import Tensor, as_tensor

__all__ = [
    "AdamState",
    "LayerSpec",
    "Sequential",
    "ShapeError",
    "Tensor",
    "TrainingError",
    "adam_step",
    "as_tensor",
    "conv2d",
    "dense",
    "flatten",
    "init_params",
    "maxpool2x2",
    "relu",
    "sigmoid",
    "soft_dice_loss",
    "softmax_channels",
    "unflatten",
    "upconv",
    "upsample2x",
]

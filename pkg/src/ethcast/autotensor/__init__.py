"""Minimal dense-tensor core: layer forward/backward passes, Adam, gradcheck."""

from ._backend import BACKEND, available_backends, describe, get_kernels
from .checks import GradcheckReport, gradcheck
from .ops import (
    concat_channels,
    concat_channels_backward,
    conv3d_backward,
    conv3d_forward,
    maxpool2_spatial_backward,
    maxpool2_spatial_forward,
    mse_loss_backward,
    mse_loss_forward,
    relu_backward,
    relu_forward,
    upsample2_nearest,
    upsample2_nearest_backward,
)
from .optim import AdamState, Parameter, adam_step

__all__ = [
    "BACKEND",
    "AdamState",
    "GradcheckReport",
    "Parameter",
    "adam_step",
    "available_backends",
    "concat_channels",
    "concat_channels_backward",
    "conv3d_backward",
    "conv3d_forward",
    "describe",
    "get_kernels",
    "gradcheck",
    "maxpool2_spatial_backward",
    "maxpool2_spatial_forward",
    "mse_loss_backward",
    "mse_loss_forward",
    "relu_backward",
    "relu_forward",
    "upsample2_nearest",
    "upsample2_nearest_backward",
]

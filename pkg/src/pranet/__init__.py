"""Desk-scale PraNet: reverse-attention segmentation on a small numpy autograd engine."""

from .autograd import GradTape, Tensor, backward, float64_mode, no_grad
from .model import ModelConfig, SideOutputs, forward, init_params, predict

__version__ = "0.1.0"

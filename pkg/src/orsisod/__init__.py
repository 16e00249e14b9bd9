"""Region-proportion-aware salient object detection for overhead imagery, built on a small numpy autograd engine."""

from .model import ModelConfig, SaliencyNet, train_step
from .tensor import Tensor

__all__ = ["ModelConfig", "SaliencyNet", "Tensor", "train_step"]
__version__ = "0.1.0"

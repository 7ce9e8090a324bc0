"""Trainable sequence models: autodiff engine, kernels, architectures."""

from .autodiff import Tensor, no_grad  # noqa: F401
from .models import ARCHITECTURES, ModelConfig, SequenceModel, init_model  # noqa: F401

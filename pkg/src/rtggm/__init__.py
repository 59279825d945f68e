"""Restricted truncated Gaussian graphical models."""

from .model import DeepModel, DomainError, Kind, ModelParams, init_model
from .truncnorm import TruncNormParams

__all__ = ["DeepModel", "DomainError", "Kind", "ModelParams", "TruncNormParams", "init_model"]
__version__ = "0.1.0"

"""Distractor-aware contrastive finetuning for few-shot classification."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

"""Desk-scale aerial semantic navigation: simulator, memory, policies, metrics."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]

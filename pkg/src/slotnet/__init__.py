"""Slot-packed ciphertext-semantics simulator with minimax nonlinearities,
refresh-pipeline numerics, failure analysis, and ResNet-20 inference."""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]

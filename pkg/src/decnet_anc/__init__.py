"""Time-domain multichannel active noise control with a decoupling network."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

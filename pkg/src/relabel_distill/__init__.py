"""Re-label distillation for explaining single classifier predictions."""
from .numkit import Rng

__version__ = "0.1.0"
__all__ = ["Rng", "__version__"]

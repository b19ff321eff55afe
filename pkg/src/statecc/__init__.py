"""State-adaptive coded caching over block-fading broadcast channels."""

from .core import SchemeParams, SubsetIndex, derive_params, enumerate_subsets, rank_of
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "SchemeParams", "SubsetIndex", "derive_params", "enumerate_subsets", "rank_of"]

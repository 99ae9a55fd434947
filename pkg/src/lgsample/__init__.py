"""Language-guided pair sampling and frozen-feature evaluation toolkit."""

__version__ = "0.1.0"

from .errors import LgsampleError, StoreFormatError, ValidationError
from .store import EmbeddingMatrix, l2_normalize, read_store, write_store

__all__ = [
    "EmbeddingMatrix",
    "LgsampleError",
    "StoreFormatError",
    "ValidationError",
    "l2_normalize",
    "read_store",
    "write_store",
    "__version__",
]

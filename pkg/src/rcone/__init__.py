"""Rough-cone embeddings for first-order logical queries over multi-modal knowledge graphs."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, RConeError  # noqa: E402
from .geometry import ConeEmbedding, DnfEmbedding  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["__version__", "BACKEND", "ConeEmbedding", "DnfEmbedding", "RConeError",
           "ConfigError", "DataError", "NumericError"]

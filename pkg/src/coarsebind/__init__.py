"""Coarse-grained protein-ligand structure, affinity and selection toolkit."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CoarseBindError,
    CoarseBindWarning,
    ConfigError,
    DivergenceError,
    FormatError,
    InputError,
    NumericError,
)

__all__ = [
    "CoarseBindError",
    "CoarseBindWarning",
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "InputError",
    "NumericError",
    "__version__",
]

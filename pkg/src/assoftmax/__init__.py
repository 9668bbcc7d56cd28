"""Adaptive sparse softmax losses, the AS-Speed accumulation scheduler and a
desk-scale trainer for comparing softmax variants."""

from assoftmax.errors import (
    ConfigError,
    ContractError,
    InvalidInputError,
    LoadError,
    NumericDivergenceError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "InvalidInputError",
    "LoadError",
    "NumericDivergenceError",
    "NumericError",
]

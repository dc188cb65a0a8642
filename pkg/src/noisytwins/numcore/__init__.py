"""Numerical substrate: seeded sampling, matrix tape autodiff, PSD square root, Adam."""

from .adam import AdamState, adam_step
from .errors import (
    ContractError,
    FormatError,
    NoisyTwinsError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .gradcheck import grad_check
from .linalg import matrix_sqrt_psd
from .rng import Rng, gaussian_sample
from .tape import Node, Tape, value_and_grad

__all__ = [
    "AdamState",
    "ContractError",
    "FormatError",
    "Node",
    "NoisyTwinsError",
    "NumericError",
    "ParameterError",
    "Rng",
    "ShapeError",
    "Tape",
    "adam_step",
    "gaussian_sample",
    "grad_check",
    "matrix_sqrt_psd",
    "value_and_grad",
]

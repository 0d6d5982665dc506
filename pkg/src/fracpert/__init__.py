"""Stable processes with lower-order non-local perturbations: kernels, series and Monte Carlo checks."""

__version__ = "0.1.0"

from .special import StableParams, normalizing_constant, stable_density_free  # noqa: E402
from .geometry import Ball, UnionOfBalls, parse_domain  # noqa: E402
from .jump_kernel import PerturbationB  # noqa: E402
from .quadrature import NumericalError  # noqa: E402

__all__ = [
    "__version__",
    "StableParams",
    "normalizing_constant",
    "stable_density_free",
    "Ball",
    "UnionOfBalls",
    "parse_domain",
    "PerturbationB",
    "NumericalError",
]

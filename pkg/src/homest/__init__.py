"""Oscillatory Darcy flow in one dimension: forward solvers, effective
models, particle transport, and estimation of effective permeabilities
from noisy multiscale observations."""

__version__ = "0.1.0"

from . import elliptic1d, fields, fluctuation, homogenization, inference, transport
from .errors import HomestError

__all__ = [
    "__version__",
    "HomestError",
    "elliptic1d",
    "fields",
    "fluctuation",
    "homogenization",
    "inference",
    "transport",
]

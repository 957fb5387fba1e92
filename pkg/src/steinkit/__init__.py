"""Stein's method for normal, Poisson and Poisson-process approximation.

Every bound is paired with an exact distance from an independent oracle in a
:class:`~steinkit.dist_core.BoundCertificate`.
"""

from .dist_core import (
    BoundCertificate,
    DistanceInterval,
    FiniteRv,
    LatticePmf,
    convolve_bernoulli,
    convolve_finite,
    kolmogorov_distance_to_normal,
    poisson_pmf,
    tv_distance,
)
from .errors import DomainError, PreconditionError, ResourceError, SteinError, WindowError

__version__ = "0.1.0"

__all__ = [
    "BoundCertificate",
    "DistanceInterval",
    "FiniteRv",
    "LatticePmf",
    "convolve_bernoulli",
    "convolve_finite",
    "kolmogorov_distance_to_normal",
    "poisson_pmf",
    "tv_distance",
    "DomainError",
    "PreconditionError",
    "ResourceError",
    "SteinError",
    "WindowError",
]

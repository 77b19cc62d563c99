"""pathlift: path-dependent SDEs lifted to (endpoint, history-window) pairs.

The package simulates finite-dimensional SDEs whose drift depends on the
whole past trajectory, represents their state as a product-space pair
(present value, backward history window), and verifies by Monte Carlo plus
finite differences that u(t, y) = E[Phi(Y^{t,y}(T))] solves both the lifted
backward Kolmogorov equation and its path-space counterpart.
"""
from .grids import (
    GridSpec,
    ForwardPath,
    WindowPair,
    GridAlignmentError,
    PathDomainError,
    restrict,
    extend,
    close_pair,
    lift_path,
    semigroup_shift,
    norm,
)

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "ForwardPath",
    "WindowPair",
    "GridAlignmentError",
    "PathDomainError",
    "restrict",
    "extend",
    "close_pair",
    "lift_path",
    "semigroup_shift",
    "norm",
    "__version__",
]

"""Small shared numerical routines."""

from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_trapezoid

__all__ = ["density_from_drift_diffusion", "nearest_rank_low"]


def density_from_drift_diffusion(grid, f, g) -> np.ndarray:
    """Normalized stationary density pi(x) ~ (1/g) exp(2 int f/g) on a grid.

    Cumulative trapezoid of 2 f/g from the grid start, stabilized by
    subtracting the running maximum before exponentiation, then normalized by
    the trapezoid integral. Used both by the curve-level derived quantities
    and by the simulators' quadrature so the two stay numerically identical.
    """
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    exponent = cumulative_trapezoid(2.0 * f / g, grid, initial=0.0)
    exponent -= exponent.max()
    unnorm = np.exp(exponent) / g
    norm = np.trapezoid(unnorm, grid)
    if not np.isfinite(norm) or norm <= 0:
        raise FloatingPointError("stationary density normalization overflowed")
    return unnorm / norm


def nearest_rank_low(values, q: float) -> float:
    """Nearest-rank lower quantile: the ceil(q*n)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=float))
    n = len(values)
    if n == 0:
        raise ValueError("empty sample")
    k = max(1, int(np.ceil(q * n)))
    return float(values[k - 1])

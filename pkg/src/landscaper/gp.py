"""Kernels, covariance assembly and Gaussian-process conditionals.

The drift prior kernel is a sum of an exponentiated quadratic, a constant and
a linear term,

    k_f(x, x') = s_q^2 exp(-(x - x')^2 / (2 l^2)) + s_b^2 + s_l^2 (x - c)(x' - c),

so that away from the data the drift tends to a line rather than to zero. The
diffusion prior uses the exponentiated quadratic alone. The mean function is
zero everywhere. Matrices are factorized with an adaptive diagonal jitter and
all conditionals go through the Cholesky factor; training sets are capped at
MAX_TRAIN_POINTS because the cost is O(n^3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import FactorizationError, PreconditionError

__all__ = [
    "DriftKernelParams",
    "DiffusionKernelParams",
    "CovMatrix",
    "drift_kernel",
    "eq_kernel",
    "cov_matrix",
    "gp_conditional",
    "MAX_TRAIN_POINTS",
]

MAX_TRAIN_POINTS = 500

JITTER_START_FRACTION = 1e-8
JITTER_MAX_FRACTION = 1e-4


@dataclass(frozen=True)
class DriftKernelParams:
    """Hyperparameters of the drift kernel (amplitudes are standard deviations)."""

    sigma_q: float
    l: float
    sigma_b: float
    sigma_l: float
    c: float

    def __post_init__(self):
        if min(self.sigma_q, self.l, self.sigma_b, self.sigma_l) <= 0:
            raise PreconditionError("drift kernel amplitudes and length scale must be positive")
        if not np.isfinite(self.c):
            raise PreconditionError("centering location must be finite")


@dataclass(frozen=True)
class DiffusionKernelParams:
    """Hyperparameters of the (exponentiated quadratic) diffusion kernel."""

    sigma_q: float
    l: float

    def __post_init__(self):
        if min(self.sigma_q, self.l) <= 0:
            raise PreconditionError("diffusion kernel parameters must be positive")


@dataclass(frozen=True)
class CovMatrix:
    """Jittered covariance matrix together with its lower Cholesky factor."""

    matrix: np.ndarray
    chol: np.ndarray
    jitter: float


def drift_kernel(x, x2, p: DriftKernelParams):
    """EQ + constant + linear covariance between states x and x2 (broadcasting)."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = x - x2
    eq = p.sigma_q**2 * np.exp(-(d * d) / (2.0 * p.l**2))
    lin = p.sigma_l**2 * (x - p.c) * (x2 - p.c)
    return eq + p.sigma_b**2 + lin


def eq_kernel(x, x2, p: DiffusionKernelParams):
    """Exponentiated quadratic covariance between states x and x2 (broadcasting)."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = x - x2
    return p.sigma_q**2 * np.exp(-(d * d) / (2.0 * p.l**2))


def kernel_matrix(x1, x2, kernel, params) -> np.ndarray:
    """Dense cross-covariance matrix k(x1_i, x2_j)."""
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    return kernel(x1[:, None], x2[None, :], params)


def cov_matrix(points, kernel, params) -> CovMatrix:
    """Pairwise kernel matrix with adaptive diagonal jitter.

    Jitter starts at 1e-8 times the mean diagonal and grows tenfold up to
    1e-4 of it until the Cholesky factorization succeeds; the level actually
    used is recorded on the result.
    """
    points = np.asarray(points, dtype=float).ravel()
    if points.size == 0:
        raise PreconditionError("cov_matrix needs at least one point")
    if points.size > MAX_TRAIN_POINTS:
        raise PreconditionError(
            f"{points.size} points exceeds the {MAX_TRAIN_POINTS}-point cap (O(n^3) cost)"
        )
    base = kernel_matrix(points, points, kernel, params)
    scale = float(np.mean(np.diag(base)))
    jitter = JITTER_START_FRACTION * scale
    eye = np.eye(len(base))
    while True:
        try:
            jittered = base + jitter * eye
            L = cholesky(jittered, lower=True)
            return CovMatrix(matrix=jittered, chol=L, jitter=jitter)
        except np.linalg.LinAlgError:
            if jitter >= JITTER_MAX_FRACTION * scale:
                raise FactorizationError(
                    f"Cholesky failed at maximum jitter {jitter:.3e} (diag scale {scale:.3e})"
                ) from None
            jitter *= 10.0


def gp_conditional(train_x, train_f, test_x, kernel, params):
    """Noiseless GP conditional of function values at test_x given train values.

    mean = K*^T K^-1 f and cov = K** - K*^T K^-1 K*, computed through the
    Cholesky factor of the jittered training matrix.
    """
    train_x = np.asarray(train_x, dtype=float).ravel()
    train_f = np.asarray(train_f, dtype=float).ravel()
    test_x = np.asarray(test_x, dtype=float).ravel()
    if train_x.size != train_f.size:
        raise PreconditionError("train_x and train_f must have equal length")
    if test_x.size == 0:
        return np.empty(0), np.empty((0, 0))
    cov = cov_matrix(train_x, kernel, params)
    k_star = kernel_matrix(train_x, test_x, kernel, params)
    k_test = kernel_matrix(test_x, test_x, kernel, params)
    alpha = cho_solve((cov.chol, True), train_f)
    mean = k_star.T @ alpha
    v = solve_triangular(cov.chol, k_star, lower=True)
    return mean, k_test - v.T @ v

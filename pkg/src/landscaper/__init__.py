"""Drift/diffusion reconstruction from collections of short time series."""

from . import derived, diagnostics, experiments, gp, hmc, inference, sim, tsdata

__version__ = "0.1.0"

__all__ = [
    "tsdata",
    "sim",
    "gp",
    "hmc",
    "diagnostics",
    "inference",
    "derived",
    "experiments",
    "__version__",
]

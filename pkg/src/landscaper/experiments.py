"""Simulation studies: state-space coverage of short vs long series, and the
true-positive-rate grid for multistability detection."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .derived import multistability_posterior
from .errors import LandscaperError, PreconditionError
from .inference import FitConfig, fit
from .numerics import density_from_drift_diffusion
from .sim import (
    INTERNAL_DT,
    SdeModel,
    estimate_timescale,
    euler_maruyama,
    generate_short_series,
)

__all__ = [
    "CoverageResult",
    "TprGrid",
    "kl_divergence",
    "coverage_experiment",
    "tpr_grid",
    "DEFAULT_TIMESTEP_FRACTIONS",
]

DEFAULT_TIMESTEP_FRACTIONS = (1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001)

DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class CoverageResult:
    """Agreement-with-truth curves for short vs long series, per budget."""

    budgets: np.ndarray
    agreement_short: np.ndarray       # replicate means
    agreement_long: np.ndarray
    replicates: int
    per_replicate_short: np.ndarray   # (replicates, n_budgets)
    per_replicate_long: np.ndarray


@dataclass(frozen=True)
class TprGrid:
    """True-positive rates for recovering the true stable-state count."""

    series_counts: tuple[int, ...]
    timesteps: tuple[float, ...]      # fractions of t_c
    tpr: np.ndarray                   # (len(series_counts), len(timesteps))
    replicates: int
    failures: np.ndarray              # fit failures per cell
    t_c: float


def kl_divergence(p, q, dx: float = 1.0) -> float:
    """KL(p || q) = sum p log(p/q) dx over grid cells, with a 1e-12 floor."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise PreconditionError("histogram and reference must share one grid")
    pf = np.maximum(p, DENSITY_FLOOR)
    qf = np.maximum(q, DENSITY_FLOOR)
    return float(np.sum(pf * np.log(pf / qf)) * dx)


def _reference_density(m: SdeModel, n_grid: int = 2001):
    grid = np.linspace(m.state_range[0], m.state_range[1], n_grid)
    f = np.asarray(m.drift(grid), dtype=float)
    g = np.maximum(np.asarray(m.diffusion(grid), dtype=float), 1e-30)
    pdf = density_from_drift_diffusion(grid, f, g)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
    cdf /= cdf[-1]
    return grid, pdf, cdf


def coverage_experiment(
    model: SdeModel,
    total_time: float = 250.0,
    replicates: int = 50,
    seed=0,
    points_per_short: int = 5,
    internal_dt: float = INTERNAL_DT,
    n_bins: int = 50,
) -> CoverageResult:
    """Expanding-window agreement between data histograms and the true density.

    Per replicate, one long trajectory and one collection of independently
    initialized short series share the same total simulation time. At each
    whole-unit budget the observed values so far are histogrammed and compared
    to the stationary density by KL divergence; agreement is 1 - KL/maxKL with
    maxKL taken over both conditions and all budgets within the replicate.
    """
    if replicates < 1:
        raise PreconditionError("replicates must be >= 1")
    grid, _, cdf = _reference_density(model)
    lo = float(np.interp(5e-4, cdf, grid))
    hi = float(np.interp(1.0 - 5e-4, cdf, grid))
    edges = np.linspace(lo, hi, n_bins + 1)
    width = edges[1] - edges[0]
    ref = np.diff(np.interp(edges, grid, cdf)) / width

    budgets = np.arange(1, int(total_time) + 1)
    span = (points_per_short - 1) * internal_dt
    n_short = int(np.floor(total_time / span))
    steps_long = int(round(total_time / internal_dt))

    agree_s = np.empty((replicates, len(budgets)))
    agree_l = np.empty((replicates, len(budgets)))
    root = np.random.SeedSequence(seed)
    for r, child in enumerate(root.spawn(replicates)):
        short_seed, long_seed = child.spawn(2)
        ds = generate_short_series(model, n_short, points_per_short, internal_dt,
                                   short_seed, internal_dt=internal_dt)
        short_values = np.concatenate([s.values for s in ds.collection.series])
        x0 = _stationary_start(model, long_seed, internal_dt)
        long_values = euler_maruyama(model, x0, internal_dt, steps_long,
                                     long_seed.spawn(1)[0]).values

        kl_s = np.empty(len(budgets))
        kl_l = np.empty(len(budgets))
        for i, tau in enumerate(budgets):
            k_series = min(int(np.floor(tau / span)), n_short)
            vals_s = short_values[: k_series * points_per_short]
            vals_l = long_values[: int(round(tau / internal_dt)) + 1]
            kl_s[i] = _histogram_kl(vals_s, edges, width, ref)
            kl_l[i] = _histogram_kl(vals_l, edges, width, ref)
        max_kl = max(kl_s.max(), kl_l.max())
        agree_s[r] = 1.0 - kl_s / max_kl
        agree_l[r] = 1.0 - kl_l / max_kl

    return CoverageResult(
        budgets=budgets.astype(float),
        agreement_short=agree_s.mean(axis=0),
        agreement_long=agree_l.mean(axis=0),
        replicates=replicates,
        per_replicate_short=agree_s,
        per_replicate_long=agree_l,
    )


def _histogram_kl(values, edges, width, ref) -> float:
    if values.size == 0:
        hist = np.zeros(len(ref))
    else:
        counts, _ = np.histogram(values, bins=edges)
        hist = counts / (values.size * width)
    return kl_divergence(hist, ref, width)


def _stationary_start(model: SdeModel, seed, internal_dt: float) -> float:
    rng = np.random.default_rng(seed)
    if model.stationary_icdf is not None:
        while True:
            u = float(rng.uniform())
            if 0.0 < u < 1.0:
                return float(model.stationary_icdf(u))
    probe = np.linspace(model.state_range[0], model.state_range[1], 2001)
    mode = float(probe[np.argmax(np.asarray(model.diffusion(probe), dtype=float))])
    return float(euler_maruyama(model, mode, internal_dt, 10_000, rng).values[-1])


def tpr_grid(
    true_model: SdeModel,
    series_counts,
    timesteps,
    replicates: int,
    cfg: FitConfig = FitConfig(),
    seed=0,
    internal_dt: float = INTERNAL_DT,
    points_per_series: int = 2,
) -> TprGrid:
    """Fraction of replicate fits whose modal stable-state count is correct.

    Cells vary the number of short series and the sampling step expressed as
    a fraction of the model's characteristic time scale (measured on a long
    reference run). Fit failures count as misses, never as positives.
    """
    if replicates < 1:
        raise PreconditionError("replicates must be >= 1")
    if true_model.label is None:
        raise PreconditionError("true_model must carry a ground-truth label")
    series_counts = tuple(int(n) for n in series_counts)
    timesteps = tuple(float(t) for t in timesteps)
    if any(t <= 0 for t in timesteps):
        raise PreconditionError("timestep fractions must be positive")

    root = np.random.SeedSequence(seed)
    tc_seed, data_seed = root.spawn(2)
    t_c = estimate_timescale(true_model, seed=tc_seed).t_c

    strides = {}
    for frac in timesteps:
        stride = int(round(frac * t_c / internal_dt))
        if stride < 1:
            raise PreconditionError(
                f"timestep fraction {frac} gives a step below the internal step {internal_dt}"
            )
        strides[frac] = stride

    tpr = np.zeros((len(series_counts), len(timesteps)))
    failures = np.zeros_like(tpr, dtype=int)
    cells = data_seed.spawn(len(series_counts) * len(timesteps))
    for i, n_series in enumerate(series_counts):
        for j, frac in enumerate(timesteps):
            cell_seed = cells[i * len(timesteps) + j]
            hits = 0
            for rep_seed in cell_seed.spawn(replicates):
                data_child, fit_child = rep_seed.spawn(2)
                try:
                    ds = generate_short_series(
                        true_model, n_series, points_per_series,
                        strides[frac] * internal_dt, data_child,
                        internal_dt=internal_dt,
                    )
                    rep_cfg = replace(cfg, seed=int(fit_child.generate_state(1)[0]))
                    post = fit(ds.collection, rep_cfg)
                    if multistability_posterior(post).mode == true_model.label:
                        hits += 1
                except LandscaperError:
                    failures[i, j] += 1
            tpr[i, j] = hits / replicates

    return TprGrid(
        series_counts=series_counts,
        timesteps=timesteps,
        tpr=tpr,
        replicates=replicates,
        failures=failures,
        t_c=float(t_c),
    )

"""Simulators for known stochastic differential equations.

Provides the cusp catastrophe family (polynomial drift, constant noise) and a
bimodal-but-unistable model with state-dependent noise, plus Euler-Maruyama
integration and generation of labeled collections of short series for model
validation. Every trajectory is driven by a seeded generator stream derived
from (seed, series index), so parallel generation is reproducible regardless
of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError, SimulationDiverged
from .numerics import density_from_drift_diffusion
from .tsdata import TimeSeries, TimeSeriesCollection, characteristic_timescale

__all__ = [
    "CuspParams",
    "SdeModel",
    "Trajectory",
    "SimulatedDataset",
    "cusp_model",
    "custom_bimodal_unistable",
    "euler_maruyama",
    "cusp_stationary_density",
    "cusp_stationary_cdf_inverse",
    "generate_short_series",
    "estimate_timescale",
]

INTERNAL_DT = 0.01
DIVERGENCE_LIMIT = 1e6
QUADRATURE_POINTS = 4001


@dataclass(frozen=True)
class CuspParams:
    """Free parameters of the cusp SDE dx = r(a + b(x-lam) - (x-lam)^3)dt + sqrt(eps) dW."""

    alpha: float
    beta: float
    lam: float
    r: float
    epsilon: float

    def __post_init__(self):
        if self.r <= 0 or self.epsilon <= 0:
            raise PreconditionError("cusp parameters r and epsilon must be positive")

    def quadrature_grid(self, n: int = QUADRATURE_POINTS) -> np.ndarray:
        # Truncation half-width 5*max(1, sqrt(beta)) keeps the quartic tails negligible.
        half = 5.0 * max(1.0, math.sqrt(max(self.beta, 0.0)))
        return np.linspace(self.lam - half, self.lam + half, n)


@dataclass(frozen=True)
class SdeModel:
    """A 1-D SDE dx = drift(x) dt + sqrt(diffusion(x)) dW with optional ground truth.

    ``diffusion`` is the squared noise intensity g (non-negative). ``label``
    is the true number of stable states when known. ``stationary_icdf``, when
    present, maps uniforms in (0,1) to stationary draws; models without it are
    initialized by burn-in.
    """

    drift: Callable
    diffusion: Callable
    name: str
    params: dict = field(default_factory=dict)
    label: int | None = None
    state_range: tuple[float, float] = (-5.0, 5.0)
    stable_points: tuple[float, ...] = ()
    tipping_points: tuple[float, ...] = ()
    stationary_icdf: Callable | None = None


@dataclass(frozen=True)
class Trajectory:
    """Uniformly spaced simulated path."""

    times: np.ndarray
    values: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class SimulatedDataset:
    """A simulated collection together with its ground-truth sidecar document."""

    collection: TimeSeriesCollection
    ground_truth: dict


def cusp_model(p: CuspParams) -> SdeModel:
    """Cusp catastrophe SDE with constant squared noise intensity epsilon."""
    alpha, beta, lam, r, eps = p.alpha, p.beta, p.lam, p.r, p.epsilon

    def drift(x):
        u = x - lam
        return r * (alpha + beta * u - u * u * u)

    def diffusion(x):
        return eps * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else eps

    # Real roots of alpha + beta*u - u^3, classified by the drift slope.
    roots = np.roots([-1.0, 0.0, beta, alpha])
    real = np.sort(roots[np.abs(roots.imag) < 1e-9].real) + lam
    slope = r * (beta - 3.0 * (real - lam) ** 2)
    stable = tuple(float(x) for x, s in zip(real, slope) if s < 0)
    tipping = tuple(float(x) for x, s in zip(real, slope) if s > 0)

    grid = p.quadrature_grid()
    icdf = _build_icdf(grid, _cusp_density_on(p, grid))

    return SdeModel(
        drift=drift,
        diffusion=diffusion,
        name="cusp",
        params={"alpha": alpha, "beta": beta, "lam": lam, "r": r, "epsilon": eps},
        label=len(stable),
        state_range=(float(grid[0]), float(grid[-1])),
        stable_points=stable,
        tipping_points=tipping,
        stationary_icdf=icdf,
    )


def custom_bimodal_unistable() -> SdeModel:
    """Unistable model whose state-dependent noise produces bimodal observations.

    drift(x) = exp(-0.08 x) - 0.95 for x <= 0 and -0.5 x^2 + 0.05 for x > 0
    (continuous at 0); squared noise g(x) = 0.844 exp(-(2x - 0.6)^2), peaking
    at x = 0.3. The single stable root sits at sqrt(0.1).
    """

    def drift(x):
        x = np.asarray(x, dtype=float)
        left = np.exp(-0.08 * np.minimum(x, 0.0)) - 0.95
        right = -0.5 * x * x + 0.05
        out = np.where(x <= 0.0, left, right)
        return out if out.ndim else float(out)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        out = 0.844 * np.exp(-((2.0 * x - 0.6) ** 2))
        return out if out.ndim else float(out)

    root = math.sqrt(0.1)
    return SdeModel(
        drift=drift,
        diffusion=diffusion,
        name="bimodal-unistable",
        params={},
        label=1,
        state_range=(-3.0, 3.0),
        stable_points=(root,),
        tipping_points=(),
    )


def euler_maruyama(m: SdeModel, x0: float, dt: float, n_steps: int, seed) -> Trajectory:
    """Integrate x_{n+1} = x_n + f(x_n) dt + sqrt(g(x_n) dt) z_n from a seeded stream.

    Deterministic given the seed. Raises SimulationDiverged with the step
    index if the state leaves [-1e6, 1e6] or becomes non-finite.
    """
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n_steps)
    sqrt_dt = math.sqrt(dt)
    values = np.empty(n_steps + 1)
    x = float(x0)
    values[0] = x
    for n in range(n_steps):
        g = float(m.diffusion(x))
        x = x + float(m.drift(x)) * dt + math.sqrt(g) * sqrt_dt * z[n]
        if not math.isfinite(x) or abs(x) > DIVERGENCE_LIMIT:
            raise SimulationDiverged(n + 1, x)
        values[n + 1] = x
    return Trajectory(times=np.arange(n_steps + 1) * dt, values=values)


def _simulate_batch(m: SdeModel, x0: np.ndarray, dt: float, z: np.ndarray) -> np.ndarray:
    """Vectorized Euler-Maruyama over a batch of walkers; returns (k, n_steps+1)."""
    k, n_steps = z.shape
    sqrt_dt = math.sqrt(dt)
    out = np.empty((k, n_steps + 1))
    x = np.asarray(x0, dtype=float).copy()
    out[:, 0] = x
    for n in range(n_steps):
        g = np.asarray(m.diffusion(x), dtype=float)
        x = x + np.asarray(m.drift(x), dtype=float) * dt + np.sqrt(g) * sqrt_dt * z[:, n]
        bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
        if np.any(bad):
            raise SimulationDiverged(n + 1, float(x[np.argmax(bad)]))
        out[:, n + 1] = x
    return out


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _cusp_density_on(p: CuspParams, grid: np.ndarray) -> np.ndarray:
    f = p.r * (p.alpha + p.beta * (grid - p.lam) - (grid - p.lam) ** 3)
    g = np.full_like(grid, p.epsilon)
    return density_from_drift_diffusion(grid, f, g)


def cusp_stationary_density(p: CuspParams, grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature of the cusp's analytic stationary density; returns (grid, pdf)."""
    grid = p.quadrature_grid() if grid is None else np.asarray(grid, dtype=float)
    return grid, _cusp_density_on(p, grid)


def _build_icdf(grid: np.ndarray, pdf: np.ndarray) -> Callable:
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
    cdf /= cdf[-1]

    def icdf(u):
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
            raise PreconditionError("u must lie strictly inside (0, 1)")
        out = np.interp(u_arr, cdf, grid)
        return out if out.ndim else float(out)

    return icdf


def cusp_stationary_cdf_inverse(p: CuspParams, u):
    """Inverse stationary CDF of the cusp model (monotone grid interpolation)."""
    grid, pdf = cusp_stationary_density(p)
    return _build_icdf(grid, pdf)(u)


def _diffusion_mode(m: SdeModel) -> float:
    probe = np.linspace(m.state_range[0], m.state_range[1], 2001)
    return float(probe[np.argmax(np.asarray(m.diffusion(probe), dtype=float))])


def generate_short_series(
    m: SdeModel,
    n_series: int,
    pts_per_series: int,
    dt_target: float,
    seed,
    internal_dt: float = INTERNAL_DT,
    burn_in_steps: int = 10_000,
) -> SimulatedDataset:
    """Simulate a labeled collection of short series with stationary starts.

    Each series draws an independent stationary initial state (inverse
    transform when the model has an analytic density, burn-in from the
    diffusion's mode otherwise), evolves at the high-resolution internal step
    and is subsampled to dt_target, which must be a whole multiple of the
    internal step.
    """
    if n_series < 1 or pts_per_series < 2:
        raise PreconditionError("need n_series >= 1 and pts_per_series >= 2")
    if dt_target < internal_dt:
        raise PreconditionError(f"dt_target must be >= internal step {internal_dt}")
    stride = round(dt_target / internal_dt)
    if abs(stride * internal_dt - dt_target) > 1e-9 * max(1.0, stride):
        raise PreconditionError(
            f"dt_target={dt_target} is not a whole multiple of the internal step {internal_dt}"
        )

    n_obs_steps = (pts_per_series - 1) * stride
    children = _as_seedseq(seed).spawn(n_series)
    rngs = [np.random.default_rng(c) for c in children]

    if m.stationary_icdf is not None:
        x0 = np.array([m.stationary_icdf(_open_uniform(r)) for r in rngs])
        n_steps = n_obs_steps
        keep_from = 0
    else:
        x0 = np.full(n_series, _diffusion_mode(m))
        n_steps = burn_in_steps + n_obs_steps
        keep_from = burn_in_steps

    z = np.stack([r.standard_normal(n_steps) for r in rngs]) if n_steps else np.empty((n_series, 0))
    paths = _simulate_batch(m, x0, internal_dt, z)
    obs = paths[:, keep_from::stride][:, :pts_per_series]
    times = np.arange(pts_per_series) * (stride * internal_dt)

    width = len(str(max(n_series - 1, 1)))
    series = tuple(
        TimeSeries(f"s{idx:0{width}d}", times, obs[idx]) for idx in range(n_series)
    )
    collection = TimeSeriesCollection(series)
    ground_truth = {
        "model": m.name,
        "params": m.params,
        "label": m.label,
        "stable_points": list(m.stable_points),
        "tipping_points": list(m.tipping_points),
        "state_range": list(m.state_range),
        "internal_dt": internal_dt,
        "dt_target": stride * internal_dt,
        "n_series": n_series,
        "pts_per_series": pts_per_series,
        "seed": _seed_repr(seed),
    }
    return SimulatedDataset(collection=collection, ground_truth=ground_truth)


def estimate_timescale(m: SdeModel, seed=0, total_time: float = 1000.0,
                       internal_dt: float = INTERNAL_DT):
    """Characteristic time scale of a model, measured on one long reference run."""
    n_steps = int(round(total_time / internal_dt))
    rng = np.random.default_rng(_as_seedseq(seed).spawn(1)[0])
    if m.stationary_icdf is not None:
        x0 = m.stationary_icdf(_open_uniform(rng))
    else:
        burn = _simulate_batch(m, np.array([_diffusion_mode(m)]), internal_dt,
                               rng.standard_normal((1, 10_000)))
        x0 = float(burn[0, -1])
    path = _simulate_batch(m, np.array([x0]), internal_dt, rng.standard_normal((1, n_steps)))
    ts = TimeSeries("reference", np.arange(n_steps + 1) * internal_dt, path[0])
    return characteristic_timescale(TimeSeriesCollection((ts,)))


def _open_uniform(rng) -> float:
    # Uniform in the open interval (0,1); rng.uniform can return 0 exactly.
    while True:
        u = float(rng.uniform())
        if 0.0 < u < 1.0:
            return u


def _seed_repr(seed):
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return str(seed)

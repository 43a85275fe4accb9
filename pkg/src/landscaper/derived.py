"""Quantities derived from drift/diffusion curves.

Stationary density, potentials, root classification, multistability
posterior, tipping region, and mean exit times. Per-draw operations accept
any posterior-like object exposing `grid`, `drift_draws` and
`diffusion_draws` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from .errors import DegenerateDataError, PreconditionError
from .numerics import density_from_drift_diffusion, nearest_rank_low

__all__ = [
    "CurvePair",
    "StabilityStructure",
    "StationaryDensity",
    "ExitTimeSolution",
    "ExitTimeBand",
    "MultistabilityPosterior",
    "TippingRegion",
    "stationary_density",
    "effective_potential",
    "potential",
    "classify_roots",
    "multistability_posterior",
    "tipping_region",
    "exit_time",
    "exit_time_band",
]

DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class CurvePair:
    """Drift and (strictly positive) diffusion values on an increasing grid."""

    grid: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "drift", np.asarray(self.drift, dtype=float))
        object.__setattr__(self, "diffusion", np.asarray(self.diffusion, dtype=float))
        if not (len(self.grid) == len(self.drift) == len(self.diffusion)):
            raise PreconditionError("curve arrays must have equal length")
        if len(self.grid) < 3:
            raise PreconditionError("need at least 3 grid points")
        if np.any(np.diff(self.grid) <= 0):
            raise PreconditionError("grid must be strictly increasing")
        if np.any(self.diffusion <= 0):
            raise PreconditionError("diffusion must be strictly positive")


@dataclass(frozen=True)
class StabilityStructure:
    """Zero crossings of the drift: downward = stable, upward = tipping."""

    stable_points: tuple[float, ...]
    tipping_points: tuple[float, ...]
    valid: bool


@dataclass(frozen=True)
class StationaryDensity:
    """Normalized stationary density on a grid."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        if np.any(self.density < 0):
            raise PreconditionError("density must be non-negative")
        total = float(np.trapezoid(self.density, self.grid))
        if abs(total - 1.0) > 1e-6:
            raise PreconditionError(f"density integrates to {total}, not 1")


@dataclass(frozen=True)
class ExitTimeSolution:
    """Mean exit time T(x), zero at the tipping anchor, solved per basin side."""

    grid: np.ndarray
    times: np.ndarray
    tipping: float
    tipping_index: int


@dataclass(frozen=True)
class ExitTimeBand:
    """Posterior mean exit-time curve with lower 60%/40% credible curves."""

    grid: np.ndarray
    mean: np.ndarray
    lower60: np.ndarray
    lower40: np.ndarray
    retained: int
    tipping: float
    mode: str


@dataclass(frozen=True)
class MultistabilityPosterior:
    """Distribution over stable-state counts, after excluding ambiguous draws."""

    probabilities: dict[int, float]
    discarded_fraction: float
    n_draws: int

    @property
    def mode(self) -> int:
        return max(sorted(self.probabilities), key=lambda k: self.probabilities[k])


@dataclass(frozen=True)
class TippingRegion:
    """Posterior summary of the single tipping point's location."""

    mean: float
    interval50: tuple[float, float]
    interval95: tuple[float, float]
    n_used: int


def stationary_density(cp: CurvePair) -> StationaryDensity:
    """pi(x) ~ (1/g) exp{2 int f/g} by cumulative trapezoid, normalized."""
    try:
        pdf = density_from_drift_diffusion(cp.grid, cp.drift, cp.diffusion)
    except FloatingPointError as exc:
        raise DegenerateDataError(str(exc)) from None
    return StationaryDensity(grid=cp.grid, density=pdf)


def effective_potential(sd: StationaryDensity) -> np.ndarray:
    """-log pi, with the density floored at 1e-300."""
    return -np.log(np.maximum(sd.density, DENSITY_FLOOR))


def potential(cp: CurvePair) -> np.ndarray:
    """Stability landscape U = -int f, anchored at U(grid start) = 0."""
    return -cumulative_trapezoid(cp.drift, cp.grid, initial=0.0)


def classify_roots(cp: CurvePair) -> StabilityStructure:
    """Locate strict sign changes of the drift by linear interpolation.

    Touching zero without changing sign is not a root. The structure is valid
    when there is exactly one more stable point than tipping points.
    """
    f = cp.drift
    x = cp.grid
    nz = np.flatnonzero(f != 0.0)
    stable: list[float] = []
    tipping: list[float] = []
    if nz.size >= 2:
        positive = f[nz] > 0
        for i in np.flatnonzero(positive[:-1] != positive[1:]):
            a, b = nz[i], nz[i + 1]
            loc = float(x[a] - f[a] * (x[b] - x[a]) / (f[b] - f[a]))
            (stable if f[a] > 0 else tipping).append(loc)
    valid = len(stable) == len(tipping) + 1
    return StabilityStructure(tuple(stable), tuple(tipping), valid)


def _draw_structures(p) -> list[StabilityStructure]:
    return [
        classify_roots(CurvePair(p.grid, f, g))
        for f, g in zip(p.drift_draws, p.diffusion_draws)
    ]


def multistability_posterior(p) -> MultistabilityPosterior:
    """Histogram of stable-state counts over valid posterior draws."""
    structures = _draw_structures(p)
    if not structures:
        raise PreconditionError("posterior has no draws")
    counts: dict[int, int] = {}
    kept = 0
    for s in structures:
        if not s.valid:
            continue
        kept += 1
        k = len(s.stable_points)
        counts[k] = counts.get(k, 0) + 1
    if kept == 0:
        raise DegenerateDataError("every posterior draw has an ambiguous root structure")
    return MultistabilityPosterior(
        probabilities={k: v / kept for k, v in sorted(counts.items())},
        discarded_fraction=1.0 - kept / len(structures),
        n_draws=len(structures),
    )


def tipping_region(p) -> TippingRegion:
    """Mean and central 50%/95% intervals of the tipping location.

    Uses draws that are valid and have exactly one tipping point; requires at
    least 20 of them.
    """
    locs = [
        s.tipping_points[0]
        for s in _draw_structures(p)
        if s.valid and len(s.tipping_points) == 1
    ]
    if len(locs) < 20:
        raise PreconditionError(f"only {len(locs)} valid bistable draws; need >= 20")
    arr = np.asarray(locs)
    q = np.quantile(arr, [0.025, 0.25, 0.75, 0.975])
    return TippingRegion(
        mean=float(arr.mean()),
        interval50=(float(q[1]), float(q[2])),
        interval95=(float(q[0]), float(q[3])),
        n_used=len(arr),
    )


def _uniform_spacing(grid: np.ndarray) -> float:
    steps = np.diff(grid)
    h = float(steps[0])
    if not np.allclose(steps, h, rtol=1e-8):
        raise PreconditionError("exit_time requires a uniformly spaced grid")
    return h


def exit_time(cp: CurvePair, tipping: float) -> ExitTimeSolution:
    """Solve f T' + (g/2) T'' = -1 separately on each side of the tipping point.

    Central differences on the uniform grid; T = 0 at the grid node nearest
    the tipping location, one-sided zero-slope rows at the two outer ends.
    """
    grid, f, g = cp.grid, cp.drift, cp.diffusion
    if not (grid[0] < tipping < grid[-1]):
        raise PreconditionError("tipping point must lie strictly inside the grid")
    h = _uniform_spacing(grid)
    k = int(np.argmin(np.abs(grid - tipping)))
    if k == 0 or k == len(grid) - 1:
        raise PreconditionError("tipping point snaps to a boundary node")

    times = np.zeros_like(grid)
    times[:k] = _solve_side(f[: k + 1], g[: k + 1], h, zero_at="right")
    times[k + 1 :] = _solve_side(f[k:], g[k:], h, zero_at="left")
    lowest = float(times.min())
    if lowest < -1e-9 * max(1.0, float(np.abs(times).max())):
        raise DegenerateDataError(
            f"exit-time solution dips to {lowest:.3e}; grid too coarse for this drift"
        )
    np.maximum(times, 0.0, out=times)
    return ExitTimeSolution(grid=grid, times=times, tipping=float(grid[k]), tipping_index=k)


def _solve_side(f: np.ndarray, g: np.ndarray, h: float, zero_at: str) -> np.ndarray:
    """Tridiagonal solve on one basin side; the Dirichlet node is excluded."""
    n = len(f) - 1  # unknowns
    if n < 2:
        raise PreconditionError("basin side has too few grid nodes")
    sub = np.zeros(n - 1)   # entries below the diagonal
    diag = np.zeros(n)
    sup = np.zeros(n - 1)   # entries above the diagonal
    rhs = np.full(n, -1.0)

    if zero_at == "right":
        # Unknowns are nodes 0..n-1; node n is the Dirichlet tipping node.
        diag[0] = -1.0
        sup[0] = 1.0
        rhs[0] = 0.0
        for i in range(1, n):
            adv = f[i] / (2.0 * h)
            dif = g[i] / (2.0 * h * h)
            sub[i - 1] = dif - adv
            diag[i] = -2.0 * dif
            if i < n - 1:
                sup[i] = dif + adv
            # the coupling of node n-1 to the tipping node multiplies T=0
    else:
        # Unknowns are side nodes 1..n (local 0..n-1); side node 0 is the tipping node.
        for j in range(n - 1):
            i = j + 1
            adv = f[i] / (2.0 * h)
            dif = g[i] / (2.0 * h * h)
            if j > 0:
                sub[j - 1] = dif - adv
            diag[j] = -2.0 * dif
            sup[j] = dif + adv
        diag[n - 1] = 1.0
        sub[n - 2] = -1.0
        rhs[n - 1] = 0.0

    ab = np.zeros((3, n))
    ab[0, 1:] = sup
    ab[1, :] = diag
    ab[2, :-1] = sub
    try:
        sol = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDataError(f"singular exit-time system on {zero_at} side: {exc}") from None
    if not np.all(np.isfinite(sol)):
        raise DegenerateDataError(f"exit-time solve produced non-finite values ({zero_at} side)")
    return sol


def exit_time_band(p, mode: str = "pointwise", min_retained: int = 10) -> ExitTimeBand:
    """Exit-time posterior band from draws sharing the posterior-mean tipping point.

    Draws are retained when they are valid, have exactly one tipping point,
    and that point lies within one grid cell of the posterior-mean drift's
    tipping point; each retained draw's BVP uses that shared anchor node. The
    lower curves take the 40th and 60th nearest-rank percentiles from below,
    either pointwise (default) or by ranking whole curves per basin side at
    the side's stable point ("curve").
    """
    if mode not in ("pointwise", "curve"):
        raise PreconditionError(f"unknown band mode {mode!r}")
    grid = p.grid
    mean_cp = CurvePair(grid, p.drift_draws.mean(axis=0), p.diffusion_draws.mean(axis=0))
    structure = classify_roots(mean_cp)
    if not (structure.valid and len(structure.tipping_points) == 1):
        raise DegenerateDataError("posterior-mean drift is not bistable")
    tip = structure.tipping_points[0]
    cell = _uniform_spacing(grid)

    solutions = []
    for f, g in zip(p.drift_draws, p.diffusion_draws):
        s = classify_roots(CurvePair(grid, f, g))
        if not (s.valid and len(s.tipping_points) == 1):
            continue
        if abs(s.tipping_points[0] - tip) > cell:
            continue
        try:
            solutions.append(exit_time(CurvePair(grid, f, g), tip).times)
        except DegenerateDataError:
            continue
    if len(solutions) < min_retained:
        raise DegenerateDataError(
            f"only {len(solutions)} draws share the posterior-mean tipping point; "
            f"need >= {min_retained}"
        )
    curves = np.asarray(solutions)
    mean_curve = curves.mean(axis=0)
    k = int(np.argmin(np.abs(grid - tip)))

    if mode == "pointwise":
        lower40 = np.array([nearest_rank_low(curves[:, j], 0.4) for j in range(len(grid))])
        lower60 = np.array([nearest_rank_low(curves[:, j], 0.6) for j in range(len(grid))])
    else:
        lower40 = np.empty(len(grid))
        lower60 = np.empty(len(grid))
        stable = sorted(structure.stable_points)
        left_ref = int(np.argmin(np.abs(grid - stable[0])))
        right_ref = int(np.argmin(np.abs(grid - stable[-1])))
        for ref, sl in ((left_ref, slice(0, k + 1)), (right_ref, slice(k, len(grid)))):
            order = np.argsort(curves[:, ref], kind="stable")
            i40 = order[max(1, int(np.ceil(0.4 * len(order)))) - 1]
            i60 = order[max(1, int(np.ceil(0.6 * len(order)))) - 1]
            lower40[sl] = curves[i40, sl]
            lower60[sl] = curves[i60, sl]

    return ExitTimeBand(
        grid=grid,
        mean=mean_curve,
        lower60=lower60,
        lower40=lower40,
        retained=len(curves),
        tipping=float(grid[k]),
        mode=mode,
    )

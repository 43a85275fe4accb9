"""Hamiltonian Monte Carlo with dual-averaging step size and diagonal mass.

The target is a callable q -> (log density, gradient) on R^d. Each transition
draws a momentum p ~ N(0, M), integrates Hamilton's equations with a leapfrog
integrator for a per-iteration jittered number of steps (uniform on
{1, ..., max_leapfrog}) and applies a Metropolis accept/reject on the total
energy. During warmup the step size follows Nesterov-style dual averaging
toward a target acceptance rate, and the diagonal mass matrix is re-estimated
from warmup draws in two windows (with shrinkage toward a small constant, and
the step size re-initialized after each update). Transitions whose energy
error exceeds ENERGY_ERROR_LIMIT, or that produce non-finite values, count as
divergent and keep the previous draw.

Chains own independent generator streams spawned from the seed by chain
index, so results do not depend on scheduling; `threads` only controls how
many chains run concurrently.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import SamplerError

__all__ = ["Chains", "sample"]

ENERGY_ERROR_LIMIT = 1000.0

# Dual-averaging constants (standard choices).
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75


@dataclass(frozen=True)
class Chains:
    """Post-warmup draws, stacked (n_chains, n_draws, dim), plus sampler stats."""

    draws: np.ndarray
    divergences: int
    step_sizes: np.ndarray
    mass_diag: np.ndarray
    accept_rates: np.ndarray
    warmup: int

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])


def sample(
    target,
    init,
    *,
    n_chains: int = 4,
    n_iterations: int = 2000,
    warmup: int | None = None,
    seed=0,
    target_accept: float = 0.8,
    max_leapfrog: int = 32,
    init_jitter: float = 1.0,
    max_init_attempts: int = 100,
    threads: int = 1,
) -> Chains:
    """Run `n_chains` HMC chains and return their post-warmup draws."""
    init = np.asarray(init, dtype=float)
    if warmup is None:
        warmup = n_iterations // 2
    if not (0 < warmup < n_iterations):
        raise SamplerError(f"warmup must be in (0, n_iterations); got {warmup}/{n_iterations}")
    streams = np.random.SeedSequence(seed).spawn(n_chains)

    def run(idx):
        rng = np.random.default_rng(streams[idx])
        return _run_chain(
            target, init, rng,
            n_iterations=n_iterations, warmup=warmup,
            target_accept=target_accept, max_leapfrog=max_leapfrog,
            init_jitter=init_jitter, max_init_attempts=max_init_attempts,
            jitter_first=idx > 0,
        )

    if threads > 1 and n_chains > 1:
        with ThreadPoolExecutor(max_workers=min(threads, n_chains)) as pool:
            results = list(pool.map(run, range(n_chains)))
    else:
        results = [run(i) for i in range(n_chains)]

    draws = np.stack([r[0] for r in results])
    return Chains(
        draws=draws,
        divergences=int(sum(r[1] for r in results)),
        step_sizes=np.array([r[2] for r in results]),
        mass_diag=np.stack([r[3] for r in results]),
        accept_rates=np.array([r[4] for r in results]),
        warmup=warmup,
    )


def _eval(target, q):
    logp, grad = target(q)
    return float(logp), np.asarray(grad, dtype=float)


def _initialize(target, init, rng, jitter, attempts, jitter_first):
    for attempt in range(attempts):
        if attempt == 0 and not jitter_first:
            q = init.copy()
        else:
            q = init + rng.uniform(-jitter, jitter, size=init.shape)
        logp, grad = _eval(target, q)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return q, logp, grad
    raise SamplerError(f"no finite starting point after {attempts} jittered attempts")


def _leapfrog(target, q, p, grad, eps, n_steps, inv_mass):
    for _ in range(n_steps):
        p = p + 0.5 * eps * grad
        q = q + eps * inv_mass * p
        logp, grad = _eval(target, q)
        if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
            return q, p, -np.inf, grad
        p = p + 0.5 * eps * grad
    return q, p, logp, grad


def _find_step_size(target, q, logp, grad, rng, inv_mass, sqrt_mass):
    """Crude doubling/halving search for a step size with ~50% acceptance."""
    eps = 1.0
    p = rng.standard_normal(q.shape) * sqrt_mass
    h0 = -logp + 0.5 * np.sum(inv_mass * p * p)
    q1, p1, logp1, _ = _leapfrog(target, q, p, grad, eps, 1, inv_mass)
    log_ratio = -(-logp1 + 0.5 * np.sum(inv_mass * p1 * p1)) + h0
    direction = 1 if log_ratio > math.log(0.5) else -1
    for _ in range(60):
        eps *= 2.0**direction
        if not (1e-10 < eps < 1e10):
            break
        q1, p1, logp1, _ = _leapfrog(target, q, p, grad, eps, 1, inv_mass)
        log_ratio = -(-logp1 + 0.5 * np.sum(inv_mass * p1 * p1)) + h0
        if direction * log_ratio <= direction * math.log(0.5):
            break
    return float(min(max(eps, 1e-10), 1e10))


class _DualAveraging:
    def __init__(self, eps0, target_accept):
        self.mu = math.log(10.0 * eps0)
        self.target = target_accept
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept_prob):
        self.count += 1
        m = self.count
        frac = 1.0 / (m + DA_T0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(m) / DA_GAMMA * self.h_bar
        eta = m**-DA_KAPPA
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_final(self):
        return math.exp(self.log_eps_bar)


def _regularized_variance(draws: np.ndarray) -> np.ndarray:
    # Shrink the sample variance toward 1e-3, as in windowed Stan adaptation.
    n = draws.shape[0]
    var = np.var(draws, axis=0, ddof=1) if n > 1 else np.ones(draws.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _run_chain(target, init, rng, *, n_iterations, warmup, target_accept,
               max_leapfrog, init_jitter, max_init_attempts, jitter_first):
    q, logp, grad = _initialize(target, init, rng, init_jitter, max_init_attempts, jitter_first)
    dim = init.size

    inv_mass = np.ones(dim)
    sqrt_mass = np.ones(dim)
    eps = _find_step_size(target, q, logp, grad, rng, inv_mass, sqrt_mass)
    da = _DualAveraging(eps, target_accept)

    # Mass-matrix re-estimation points inside warmup.
    updates = sorted({int(0.5 * warmup), int(0.9 * warmup)})
    window_start = int(0.15 * warmup)
    window: list[np.ndarray] = []

    kept = np.empty((n_iterations - warmup, dim))
    divergences = 0
    accept_sum = 0.0

    for it in range(n_iterations):
        adapting = it < warmup
        p = rng.standard_normal(dim) * sqrt_mass
        n_steps = 1 + int(rng.uniform() * max_leapfrog)
        n_steps = min(n_steps, max_leapfrog)
        h0 = -logp + 0.5 * np.sum(inv_mass * p * p)
        q1, p1, logp1, grad1 = _leapfrog(target, q, p, grad, eps, n_steps, inv_mass)

        if math.isfinite(logp1):
            h1 = -logp1 + 0.5 * np.sum(inv_mass * p1 * p1)
            energy_error = h1 - h0
        else:
            energy_error = np.inf
        divergent = not math.isfinite(energy_error) or energy_error > ENERGY_ERROR_LIMIT
        if divergent:
            accept_prob = 0.0
        elif energy_error <= 0.0:
            accept_prob = 1.0
        else:
            accept_prob = math.exp(-energy_error)

        if not divergent and rng.uniform() < accept_prob:
            q, logp, grad = q1, logp1, grad1

        if adapting:
            da.update(accept_prob)
            eps = da.eps
            if it >= window_start:
                window.append(q.copy())
            if it + 1 in updates and len(window) >= 10:
                inv_mass = _regularized_variance(np.asarray(window))
                sqrt_mass = 1.0 / np.sqrt(inv_mass)
                window = []
                eps = _find_step_size(target, q, logp, grad, rng, inv_mass, sqrt_mass)
                da = _DualAveraging(eps, target_accept)
            if it + 1 == warmup:
                eps = da.eps_final
        else:
            kept[it - warmup] = q
            divergences += int(divergent)
            accept_sum += accept_prob

    n_kept = n_iterations - warmup
    return kept, divergences, eps, 1.0 / inv_mass, accept_sum / max(n_kept, 1)

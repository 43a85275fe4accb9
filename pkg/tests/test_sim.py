import math

import numpy as np
import pytest
from scipy.optimize import brentq

from landscaper.errors import PreconditionError, SimulationDiverged
from landscaper.sim import (
    CuspParams,
    SdeModel,
    cusp_model,
    cusp_stationary_cdf_inverse,
    cusp_stationary_density,
    custom_bimodal_unistable,
    euler_maruyama,
    generate_short_series,
)
from landscaper.tsdata import to_transitions

from oracles import sign_scan_roots


class TestCuspModel:
    def test_symmetric_roots(self):
        m = cusp_model(CuspParams(alpha=0, beta=1, lam=0, r=1, epsilon=1))
        for x in (0.0, 1.0, -1.0):
            assert m.drift(x) == pytest.approx(0.0, abs=1e-12)
        assert m.drift(0.5) == pytest.approx(0.375)
        assert m.label == 2
        assert m.tipping_points == (0.0,)

    def test_monotone_cubic_is_unistable(self):
        m = cusp_model(CuspParams(alpha=0, beta=-1, lam=0, r=1, epsilon=1))
        assert m.label == 1
        assert m.stable_points == (0.0,)
        assert m.tipping_points == ()

    def test_rejects_bad_params(self):
        with pytest.raises(PreconditionError):
            CuspParams(alpha=0, beta=1, lam=0, r=0.0, epsilon=1)
        with pytest.raises(PreconditionError):
            CuspParams(alpha=0, beta=1, lam=0, r=1, epsilon=-1)

    def test_roots_match_sign_scan_oracle(self, rng):
        for _ in range(20):
            p = CuspParams(
                alpha=float(rng.uniform(-0.5, 0.5)),
                beta=float(rng.uniform(-1.5, 1.5)),
                lam=float(rng.uniform(-1.0, 1.0)),
                r=float(rng.uniform(0.2, 2.0)),
                epsilon=float(rng.uniform(0.2, 2.0)),
            )
            m = cusp_model(p)
            stable, tipping = sign_scan_roots(m.drift, p.lam - 6, p.lam + 6)
            np.testing.assert_allclose(m.stable_points, stable, atol=1e-6)
            np.testing.assert_allclose(m.tipping_points, tipping, atol=1e-6)


class TestCustomBimodalUnistable:
    def test_continuous_at_zero(self):
        m = custom_bimodal_unistable()
        assert m.drift(0.0) == pytest.approx(0.05)
        assert m.drift(-1e-12) == pytest.approx(0.05, abs=1e-10)
        assert m.drift(1e-12) == pytest.approx(0.05, abs=1e-10)

    def test_diffusion_peak(self):
        m = custom_bimodal_unistable()
        assert m.diffusion(0.3) == pytest.approx(0.844)
        xs = np.linspace(-3, 3, 2001)
        assert xs[np.argmax(m.diffusion(xs))] == pytest.approx(0.3, abs=0.01)

    def test_single_stable_root_at_sqrt_tenth(self):
        m = custom_bimodal_unistable()
        root = brentq(m.drift, 0.01, 2.0)
        assert root == pytest.approx(math.sqrt(0.1), abs=1e-9)
        assert m.stable_points[0] == pytest.approx(math.sqrt(0.1), abs=1e-6)
        assert m.label == 1
        # left branch strictly positive
        xs = np.linspace(-10, 0, 500)
        assert np.all(m.drift(xs) > 0)

    def test_diffusion_strictly_positive(self):
        m = custom_bimodal_unistable()
        xs = np.linspace(-5, 5, 1001)
        assert np.all(m.diffusion(xs) > 0)


class TestEulerMaruyama:
    def test_deterministic_euler(self):
        m = SdeModel(drift=lambda x: 0.5, diffusion=lambda x: 0.0, name="const")
        traj = euler_maruyama(m, 1.0, 0.1, 10, seed=0)
        np.testing.assert_allclose(traj.values, 1.0 + 0.5 * 0.1 * np.arange(11), rtol=1e-12)

    def test_pure_wiener_variance(self):
        m = SdeModel(drift=lambda x: 0.0, diffusion=lambda x: 1.0, name="wiener")
        dt = 0.05
        traj = euler_maruyama(m, 0.0, dt, 100_000, seed=42)
        incr = np.diff(traj.values)
        assert abs(incr.var() - dt) < 0.05 * dt

    def test_seed_determinism(self, bistable_cusp):
        a = euler_maruyama(bistable_cusp, 0.5, 0.01, 500, seed=9)
        b = euler_maruyama(bistable_cusp, 0.5, 0.01, 500, seed=9)
        np.testing.assert_array_equal(a.values, b.values)

    def test_divergence_reports_step(self):
        m = SdeModel(drift=lambda x: x * x, diffusion=lambda x: 0.0, name="blowup")
        with pytest.raises(SimulationDiverged) as err:
            euler_maruyama(m, 5.0, 1.0, 100, seed=0)
        assert err.value.step > 0

    def test_long_run_histogram_matches_analytic_density(self, bistable_cusp):
        # Invariant: EM at dt=0.01 converges to the quadrature stationary density.
        traj = euler_maruyama(bistable_cusp, -1.0, 0.01, 1_000_000, seed=7)
        grid, pdf = cusp_stationary_density(
            CuspParams(alpha=0, beta=1, lam=0, r=1, epsilon=0.5))
        cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
        cdf /= cdf[-1]
        edges = np.linspace(-2.5, 2.5, 61)
        width = edges[1] - edges[0]
        counts, _ = np.histogram(traj.values, bins=edges)
        hist = counts / (traj.values.size * width)
        ref = np.diff(np.interp(edges, grid, cdf)) / width
        mask = np.maximum(hist, ref) > 1e-12
        kl = float(np.sum(np.maximum(hist[mask], 1e-12)
                          * np.log(np.maximum(hist[mask], 1e-12) / np.maximum(ref[mask], 1e-12))
                          ) * width)
        assert kl < 0.05


class TestStationarySampling:
    def test_symmetric_median_is_zero(self):
        p = CuspParams(alpha=0, beta=1, lam=0, r=1, epsilon=0.5)
        assert cusp_stationary_cdf_inverse(p, 0.5) == pytest.approx(0.0, abs=5e-3)

    def test_monotone(self):
        p = CuspParams(alpha=0.2, beta=1, lam=0.3, r=1, epsilon=0.5)
        us = np.linspace(0.01, 0.99, 99)
        vals = cusp_stationary_cdf_inverse(p, us)
        assert np.all(np.diff(vals) >= 0)

    def test_rejects_boundary_u(self):
        p = CuspParams(alpha=0, beta=1, lam=0, r=1, epsilon=0.5)
        for u in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(PreconditionError):
                cusp_stationary_cdf_inverse(p, u)

    def test_draw_histogram_matches_quadrature(self):
        p = CuspParams(alpha=0, beta=1, lam=0, r=1, epsilon=0.5)
        rng = np.random.default_rng(3)
        draws = cusp_stationary_cdf_inverse(p, rng.uniform(1e-12, 1 - 1e-12, 100_000))
        grid, pdf = cusp_stationary_density(p)
        cdf = np.concatenate(([0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))))
        cdf /= cdf[-1]
        edges = np.linspace(-2.5, 2.5, 81)
        width = edges[1] - edges[0]
        counts, _ = np.histogram(draws, bins=edges)
        hist = counts / (draws.size * width)
        ref = np.diff(np.interp(edges, grid, cdf)) / width
        kl = float(np.sum(np.maximum(hist, 1e-12)
                          * np.log(np.maximum(hist, 1e-12) / np.maximum(ref, 1e-12))) * width)
        assert kl < 0.01


class TestGenerateShortSeries:
    def test_two_point_series_count(self, bistable_cusp):
        ds = generate_short_series(bistable_cusp, 50, 2, 0.1, seed=0)
        assert len(ds.collection.series) == 50
        assert len(to_transitions(ds.collection)) == 50

    def test_native_step_no_subsampling(self, bistable_cusp):
        ds = generate_short_series(bistable_cusp, 3, 6, 0.01, seed=0)
        for s in ds.collection.series:
            np.testing.assert_allclose(np.diff(s.times), 0.01, rtol=1e-12)

    def test_seeded_repeat_identical(self, bistable_cusp):
        a = generate_short_series(bistable_cusp, 10, 3, 0.05, seed=21)
        b = generate_short_series(bistable_cusp, 10, 3, 0.05, seed=21)
        for sa, sb in zip(a.collection.series, b.collection.series):
            np.testing.assert_array_equal(sa.values, sb.values)

    def test_ground_truth_sidecar(self, bistable_cusp):
        ds = generate_short_series(bistable_cusp, 4, 2, 0.1, seed=1)
        gt = ds.ground_truth
        assert gt["model"] == "cusp"
        assert gt["label"] == 2
        assert gt["stable_points"] == [-1.0, 1.0]
        assert gt["dt_target"] == pytest.approx(0.1)

    def test_invalid_counts(self, bistable_cusp):
        with pytest.raises(PreconditionError):
            generate_short_series(bistable_cusp, 0, 2, 0.1, seed=0)
        with pytest.raises(PreconditionError):
            generate_short_series(bistable_cusp, 5, 1, 0.1, seed=0)

    def test_non_multiple_dt_rejected(self, bistable_cusp):
        with pytest.raises(PreconditionError):
            generate_short_series(bistable_cusp, 5, 2, 0.015, seed=0)
        with pytest.raises(PreconditionError):
            generate_short_series(bistable_cusp, 5, 2, 0.005, seed=0)

    def test_burn_in_start_for_custom_model(self):
        m = custom_bimodal_unistable()
        ds = generate_short_series(m, 20, 2, 0.05, seed=3)
        values = ds.collection.all_values()
        # stationary support of the custom model is roughly [-1, 1.2]
        assert values.min() > -2.0 and values.max() < 2.0

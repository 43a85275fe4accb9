import math

import numpy as np
import pytest

from landscaper.errors import PreconditionError
from landscaper.gp import (
    MAX_TRAIN_POINTS,
    DiffusionKernelParams,
    DriftKernelParams,
    cov_matrix,
    drift_kernel,
    eq_kernel,
    gp_conditional,
    kernel_matrix,
)

from oracles import gp_conditional_direct


def random_drift_params(rng):
    return DriftKernelParams(
        sigma_q=float(rng.uniform(0.3, 2.0)),
        l=float(rng.uniform(0.3, 2.0)),
        sigma_b=float(rng.uniform(0.3, 2.0)),
        sigma_l=float(rng.uniform(0.3, 2.0)),
        c=float(rng.uniform(-1, 1)),
    )


class TestKernels:
    def test_drift_kernel_at_center(self):
        p = DriftKernelParams(sigma_q=1.5, l=0.7, sigma_b=0.4, sigma_l=2.0, c=0.3)
        assert drift_kernel(0.3, 0.3, p) == pytest.approx(1.5**2 + 0.4**2)

    def test_drift_kernel_far_limit(self):
        p = DriftKernelParams(sigma_q=1.0, l=0.5, sigma_b=0.8, sigma_l=1.0, c=0.0)
        assert drift_kernel(0.0, 1e8, p) == pytest.approx(0.8**2)

    def test_drift_kernel_hand_value(self):
        p = DriftKernelParams(sigma_q=1.0, l=1.0, sigma_b=1.0, sigma_l=1.0, c=0.0)
        expected = math.exp(-0.5) + 1.0  # linear term vanishes at x=0
        assert drift_kernel(0.0, 1.0, p) == pytest.approx(expected, abs=1e-12)

    def test_eq_kernel_diagonal_and_symmetry(self, rng):
        p = DiffusionKernelParams(sigma_q=1.3, l=0.9)
        assert eq_kernel(0.7, 0.7, p) == pytest.approx(1.3**2)
        xs = rng.normal(size=10)
        ys = rng.normal(size=10)
        np.testing.assert_allclose(eq_kernel(xs, ys, p), eq_kernel(ys, xs, p))

    def test_eq_kernel_long_lengthscale_limit(self):
        p = DiffusionKernelParams(sigma_q=2.0, l=1e9)
        assert eq_kernel(-5.0, 5.0, p) == pytest.approx(4.0)

    def test_drift_reduces_to_eq_plus_const_as_linear_vanishes(self, rng):
        pd = DriftKernelParams(sigma_q=1.2, l=0.8, sigma_b=0.5, sigma_l=1e-12, c=0.0)
        pe = DiffusionKernelParams(sigma_q=1.2, l=0.8)
        xs = rng.normal(size=8)
        np.testing.assert_allclose(
            drift_kernel(xs[:, None], xs[None, :], pd),
            eq_kernel(xs[:, None], xs[None, :], pe) + 0.25,
            atol=1e-10,
        )

    def test_invalid_params_rejected(self):
        with pytest.raises(PreconditionError):
            DriftKernelParams(sigma_q=0.0, l=1, sigma_b=1, sigma_l=1, c=0)
        with pytest.raises(PreconditionError):
            DiffusionKernelParams(sigma_q=1, l=-1)


class TestCovMatrix:
    def test_single_point(self):
        p = DiffusionKernelParams(sigma_q=2.0, l=1.0)
        cov = cov_matrix([0.5], eq_kernel, p)
        assert cov.matrix.shape == (1, 1)
        assert cov.matrix[0, 0] == pytest.approx(4.0, rel=1e-6)
        assert cov.jitter > 0

    def test_duplicate_points_factorize_with_jitter(self):
        p = DiffusionKernelParams(sigma_q=1.0, l=1.0)
        cov = cov_matrix([1.0, 1.0, 1.0], eq_kernel, p)
        assert np.all(np.isfinite(cov.chol))

    def test_random_points_psd_after_jitter(self, rng):
        p = random_drift_params(rng)
        points = rng.uniform(-3, 3, 50)
        cov = cov_matrix(points, drift_kernel, p)
        assert np.linalg.eigvalsh(cov.matrix).min() >= -1e-10
        np.testing.assert_allclose(cov.matrix, cov.matrix.T, atol=1e-12)

    def test_point_cap(self, rng):
        p = DiffusionKernelParams(sigma_q=1.0, l=1.0)
        with pytest.raises(PreconditionError, match="cap"):
            cov_matrix(np.linspace(0, 1, MAX_TRAIN_POINTS + 1), eq_kernel, p)

    def test_empty_rejected(self):
        with pytest.raises(PreconditionError):
            cov_matrix([], eq_kernel, DiffusionKernelParams(sigma_q=1, l=1))


class TestGpConditional:
    def test_interpolates_training_points(self, rng):
        p = random_drift_params(rng)
        train_x = np.linspace(-2, 2, 7)
        train_f = np.sin(train_x)
        mean, cov = gp_conditional(train_x, train_f, train_x, drift_kernel, p)
        np.testing.assert_allclose(mean, train_f, atol=1e-5)
        assert np.all(np.diag(cov) < 1e-4)

    def test_empty_test_set(self):
        p = DiffusionKernelParams(sigma_q=1, l=1)
        mean, cov = gp_conditional([0.0, 1.0], [1.0, 2.0], [], eq_kernel, p)
        assert mean.size == 0 and cov.shape == (0, 0)

    def test_matches_direct_formula_and_3sigma(self, rng):
        # Truth sampled from the same GP, so the 3-sigma envelope is calibrated;
        # mean/cov checked against an inverse-based implementation.
        grid = np.linspace(-2, 2, 60)
        train_idx = np.array([3, 17, 30, 44, 56])
        for _ in range(20):
            p = random_drift_params(rng)
            full = kernel_matrix(grid, grid, drift_kernel, p) + 1e-10 * np.eye(grid.size)
            truth = np.linalg.cholesky(full) @ rng.standard_normal(grid.size)
            mean, cov = gp_conditional(grid[train_idx], truth[train_idx], grid,
                                       drift_kernel, p)
            direct_mean, direct_cov = gp_conditional_direct(
                grid[train_idx], truth[train_idx], grid, drift_kernel, p,
                jitter=1e-8 * float(np.mean(np.diag(
                    kernel_matrix(grid[train_idx], grid[train_idx], drift_kernel, p)))))
            np.testing.assert_allclose(mean, direct_mean, atol=1e-6)
            np.testing.assert_allclose(cov, direct_cov, atol=1e-5)
            sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
            assert np.all(np.abs(mean - truth) <= 3.0 * sd + 1e-3)

    def test_posterior_variance_nonnegative_and_small_at_train(self, rng):
        p = DiffusionKernelParams(sigma_q=1.5, l=0.7)
        train_x = rng.uniform(-2, 2, 9)
        train_f = rng.normal(size=9)
        _, cov = gp_conditional(train_x, train_f, np.linspace(-2, 2, 40), eq_kernel, p)
        assert np.all(np.diag(cov) >= -1e-10)

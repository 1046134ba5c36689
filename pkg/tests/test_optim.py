"""Multi-start maximisation: stacking, separability, determinism."""

import numpy as np
import pytest

from batchquad.gp import GaussianMeasure, NumericalError
from batchquad.optim import ascend_fixed_step, concat_objective, maximise, sample_starts

PRIOR_1D = GaussianMeasure([0.0], [1.0])
PRIOR_2D = GaussianMeasure([0.0, 0.0], np.eye(2))


def quadratic(center):
    center = np.asarray(center, dtype=float)

    def f(x):
        x = np.atleast_2d(x)
        d = x - center
        return -np.sum(d * d, axis=1), -2.0 * d

    return f


def two_bumps(x):
    """Asymmetric bump pair; the right bump (at +1) is higher."""
    x = np.atleast_2d(x)
    t = x[:, 0]
    a = np.exp(-0.5 * ((t - 1.0) / 0.3) ** 2)
    b = 0.7 * np.exp(-0.5 * ((t + 1.0) / 0.3) ** 2)
    vals = a + b
    grads = (-a * (t - 1.0) / 0.09 - b * (t + 1.0) / 0.09)[:, None]
    return vals, grads


class TestSampleStarts:
    def test_count_is_ten_per_dimension(self):
        assert sample_starts(PRIOR_2D, 2, seed=0).shape == (20, 2)

    def test_aggregated_mean_matches_prior(self):
        starts = np.vstack([sample_starts(PRIOR_2D, 2, seed=s) for s in range(500)])
        assert starts.shape[0] == 10_000
        np.testing.assert_allclose(starts.mean(axis=0), 0.0, atol=0.05)

    def test_deterministic(self):
        np.testing.assert_array_equal(
            sample_starts(PRIOR_1D, 1, seed=11), sample_starts(PRIOR_1D, 1, seed=11)
        )


class TestConcatObjective:
    def test_direct_sum(self):
        f = quadratic([0.0])
        stacked = concat_objective(f, np.array([[1.0], [2.0]]))
        val, grad = stacked(np.array([1.0, 2.0]))
        assert val == -5.0
        np.testing.assert_array_equal(grad, [-2.0, -4.0])

    def test_zero_cross_block_gradient(self):
        f = quadratic([0.5, -0.5])
        starts = np.random.default_rng(0).normal(size=(4, 2))
        stacked = concat_objective(f, starts)
        z = starts.ravel().copy()
        _, g0 = stacked(z)
        z2 = z.copy()
        z2[2:4] += 0.37  # perturb block 1 only
        _, g1 = stacked(z2)
        np.testing.assert_array_equal(g0[:2], g1[:2])
        np.testing.assert_array_equal(g0[4:], g1[4:])

    def test_stack_matches_per_start_loop_fixed_step(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            center = rng.normal(size=2)
            f = quadratic(center)
            starts = rng.normal(size=(6, 2))
            stacked_pts, _ = ascend_fixed_step(f, starts, step=0.1, iters=40)
            for i, s in enumerate(starts):
                solo_pts, _ = ascend_fixed_step(f, s[None, :], step=0.1, iters=40)
                np.testing.assert_allclose(stacked_pts[i], solo_pts[0], atol=1e-8, rtol=0)


class TestMaximise:
    def test_quadratic_maximum(self):
        c = np.array([0.4, -1.2])
        x, val = maximise(quadratic(c), PRIOR_2D, 2, seed=5)
        np.testing.assert_allclose(x, c, atol=1e-6)
        assert val == pytest.approx(0.0, abs=1e-10)

    def test_two_bump_mixture_finds_higher_peak(self):
        grid = np.linspace(-4, 4, 200_001)[:, None]
        oracle_x = grid[np.argmax(two_bumps(grid)[0]), 0]
        hits = 0
        for seed in range(20):
            x, _ = maximise(two_bumps, PRIOR_1D, 1, seed=seed)
            if abs(x[0] - oracle_x) < 1e-3:
                hits += 1
        assert hits >= 18

    def test_constant_objective_returns_a_start(self):
        def const(x):
            x = np.atleast_2d(x)
            return np.full(x.shape[0], 3.7), np.zeros_like(x)

        starts = sample_starts(PRIOR_1D, 1, seed=2)
        x, val = maximise(const, PRIOR_1D, 1, seed=2)
        assert val == 3.7
        assert np.any(np.all(np.isclose(starts, x[None, :], atol=1e-12), axis=1))

    def test_never_worse_than_any_start(self):
        rng = np.random.default_rng(3)
        for seed in range(10):
            c = rng.normal(size=1)
            f = quadratic(c)
            starts = sample_starts(PRIOR_1D, 1, seed=seed)
            _, val = maximise(f, PRIOR_1D, 1, seed=seed)
            assert val >= np.max(f(starts)[0]) - 1e-12

    def test_deterministic(self):
        a = maximise(two_bumps, PRIOR_1D, 1, seed=9)
        b = maximise(two_bumps, PRIOR_1D, 1, seed=9)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]

    def test_all_non_finite_starts_error(self):
        def broken(x):
            x = np.atleast_2d(x)
            return np.full(x.shape[0], np.nan), np.zeros_like(x)

        with pytest.raises(NumericalError):
            maximise(broken, PRIOR_1D, 1, seed=0)

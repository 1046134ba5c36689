"""Experiment problem generators and their ground-truth certification."""

import math

import numpy as np
import pytest

from batchquad.problems import (
    branin,
    collect_branin_dataset,
    gen_evidence_problem,
    gen_inmodel_problem,
    gen_mixture_problem,
    mixture_density,
    mixture_prior_convolution,
    trapezoid_grid_2d,
    verify_ground_truth,
    GENERATORS,
)


class TestInmodelProblem:
    @pytest.fixture(scope="class")
    def problem(self):
        return gen_inmodel_problem(seed=0)

    def test_non_negative_everywhere(self, problem):
        pts = np.random.default_rng(0).uniform(-6, 6, (10_000, 2))
        assert np.all(problem.integrand(pts) >= 0.0)

    def test_grid_refinement(self, problem):
        refined = verify_ground_truth(problem)
        denom = max(abs(problem.truth.value), 1e-12)
        assert abs(refined - problem.truth.value) / denom < 1e-4

    def test_deterministic_given_seed(self, problem):
        again = gen_inmodel_problem(seed=0)
        probes = np.random.default_rng(1).uniform(-3, 3, (50, 2))
        np.testing.assert_array_equal(problem.integrand(probes), again.integrand(probes))

    def test_different_seeds_differ(self, problem):
        other = gen_inmodel_problem(seed=1)
        probes = np.random.default_rng(2).uniform(-3, 3, (10, 2))
        assert not np.allclose(problem.integrand(probes), other.integrand(probes))


class TestMixtureProblem:
    def test_forced_single_component_1d(self):
        w = np.array([1.0])
        means = np.array([[0.0]])
        variances = np.array([1.0])
        val = mixture_prior_convolution(w, means, variances, prior_var=1.0)
        assert val == pytest.approx(1.0 / math.sqrt(4 * math.pi), rel=1e-12)
        axis = np.linspace(-12, 12, 20_001)[:, None]
        h = axis[1, 0] - axis[0, 0]
        dens = mixture_density(axis, w, means, variances)
        prior = np.exp(-0.5 * axis[:, 0] ** 2) / math.sqrt(2 * math.pi)
        assert val == pytest.approx(float(np.sum(dens * prior) * h), rel=1e-8)

    def test_analytic_matches_grid_on_2d_reduction(self):
        rng = np.random.default_rng(3)
        k = 6
        w = np.full(k, 1.0 / k)
        means = rng.uniform(-3, 3, (k, 2))
        variances = rng.uniform(1, 4, k)
        analytic = mixture_prior_convolution(w, means, variances, prior_var=4.0)

        def f(pts):
            prior = np.exp(-0.25 * 0.5 * np.sum(pts**2, axis=1)) / (2 * math.pi * 2.0)
            return mixture_density(pts, w, means, variances) * prior

        grid = trapezoid_grid_2d(f, -12.0, 12.0, 801)
        assert abs(grid - analytic) / analytic < 1e-4

    def test_component_count_range(self):
        counts = {gen_mixture_problem(seed).meta["n_components"] for seed in range(1000)}
        assert counts <= set(range(10, 16))
        assert len(counts) == 6  # all values appear over 1000 seeds

    def test_truth_cross_check(self):
        problem = gen_mixture_problem(seed=5)
        assert verify_ground_truth(problem) == pytest.approx(problem.truth.value, rel=1e-10)

    def test_prior_is_sd_two(self):
        problem = gen_mixture_problem(seed=6)
        np.testing.assert_array_equal(problem.prior.covariance, 4.0 * np.eye(4))


class TestBranin:
    def test_known_minima(self):
        for pt in ([math.pi, 2.275], [-math.pi, 12.275], [9.42478, 2.475]):
            assert branin(pt) == pytest.approx(0.397887, abs=1e-5)

    def test_global_lower_bound(self):
        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.uniform(-5, 10, 10_000), rng.uniform(0, 15, 10_000)])
        assert np.all(branin(pts) >= 0.397887 - 1e-6)


class TestEvidenceProblem:
    @pytest.fixture(scope="class")
    def problem(self):
        return gen_evidence_problem(seed=0, grid_res=201)

    def test_dataset_deterministic_and_in_domain(self):
        x1, y1 = collect_branin_dataset(seed=3)
        x2, y2 = collect_branin_dataset(seed=3)
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(y1, y2)
        assert x1.shape == (20, 2)
        assert np.all((x1[:, 0] >= -5) & (x1[:, 0] <= 10))
        assert np.all((x1[:, 1] >= 0) & (x1[:, 1] <= 15))
        # all rows distinct
        assert len({tuple(row) for row in np.round(x1, 12)}) == 20

    def test_integrand_strictly_positive_on_grid_nodes(self, problem):
        axis = np.linspace(-4.0, 4.0, 201)
        rng = np.random.default_rng(5)
        ii = rng.integers(0, 201, 400)
        jj = rng.integers(0, 201, 400)
        nodes = np.column_stack([axis[ii], axis[jj]])
        corners = np.array([[-4.0, -4.0], [-4.0, 4.0], [4.0, -4.0], [4.0, 4.0]])
        vals = problem.integrand(np.vstack([nodes, corners]))
        assert np.all(vals > 0.0)

    def test_grid_refinement_in_log_space(self, problem):
        refined = verify_ground_truth(problem)
        assert abs(refined - problem.truth.value) / max(abs(problem.truth.value), 1e-9) < 1e-4

    def test_log_integrand_consistent(self, problem):
        theta = np.array([[0.0, 0.0], [1.0, -0.5]])
        np.testing.assert_allclose(
            np.log(problem.integrand(theta)), problem.log_integrand(theta), rtol=1e-12
        )

    def test_error_metric_is_log_space(self, problem):
        assert problem.log_error


def test_generator_registry():
    assert set(GENERATORS) == {"inmodel", "mixture", "evidence"}

"""Square-root-warped Bayesian quadrature against a Gaussian measure.

The integrand ``f >= 0`` is modelled through ``g = sqrt(2 (f - alpha))`` with
a GP on ``g``; linearising the square recovers an integrand surrogate with
mean ``alpha + 0.5 m_g(x)**2`` and covariance ``m_g(x) C_g(x,x') m_g(x')``.
For the SE kernel and a Gaussian measure the required kernel integrals are
closed form, so the integral mean is too. Vanilla (unwarped) BQ moments are
kept alongside as an independent reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from . import kernels
from .gp import GaussianMeasure, GpModel, KernelParams, as_points, fit_gp


@dataclass(frozen=True)
class IntegralEstimate:
    """Posterior mean and variance of the integral value."""

    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


class WarpedModel:
    """Offset ``alpha`` plus a GP on the square-root-warped targets."""

    def __init__(self, alpha, g_model):
        self.alpha = float(alpha)
        self.g_model = g_model

    @classmethod
    def fit(cls, inputs, values, params, min_fraction=0.8, jitter=None):
        """Warp the raw non-negative ``values`` and fit the g-space GP."""
        alpha, g = warp_targets(values, min_fraction)
        return cls(alpha, fit_gp(inputs, g, params, jitter=jitter))

    @property
    def dim(self):
        return self.g_model.dim

    def integrand_mean(self, x):
        """Model-implied integrand mean ``alpha + 0.5 m_g(x)**2`` at rows of x."""
        mean, _ = self.g_model.posterior_batch(np.asarray(x, dtype=float))
        return self.alpha + 0.5 * mean**2


def warp_targets(values, min_fraction=0.8):
    """Offset and square-root warp: ``alpha = min_fraction * min(values)``.

    Returns ``(alpha, g)`` with ``g_i = sqrt(2 (values_i - alpha))``.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("need at least one value to warp")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    if np.any(values < 0):
        raise ValueError("warp requires non-negative values")
    if not 0.0 <= min_fraction <= 1.0:
        raise ValueError("min_fraction must lie in [0, 1]")
    alpha = min_fraction * float(values.min())
    return alpha, np.sqrt(2.0 * (values - alpha))


def _smoothed_inverse(params, prior, scale):
    """Inverse and sqrt-determinant of ``scale * l^2 * I + S``."""
    mat = scale * params.lengthscale**2 * np.eye(prior.dim) + prior.covariance
    lower = cholesky(mat, lower=True)
    inv = cho_solve((lower, True), np.eye(prior.dim))
    half_logdet = float(np.sum(np.log(np.diag(lower))))
    return inv, half_logdet


def kernel_prior_mean(params, prior, x):
    """Integral of ``k(x, .)`` against the Gaussian measure (closed form)."""
    x = as_points(x, prior.dim)
    return float(kernel_prior_mean_vector(params, prior, x)[0])


def kernel_prior_mean_vector(params, prior, x):
    """Vectorised :func:`kernel_prior_mean` over the rows of ``x``."""
    x = as_points(np.asarray(x), prior.dim)
    inv, half_logdet = _smoothed_inverse(params, prior, 1.0)
    detfac = math.exp(prior.dim * math.log(params.lengthscale) - half_logdet)
    return kernels.prior_kernel_mean(x, params.output_scale**2, detfac, prior.mean, inv)


def kernel_prior_double_mean(params, prior):
    """Double integral of the kernel against the measure (closed form)."""
    mat = params.lengthscale**2 * np.eye(prior.dim) + 2.0 * prior.covariance
    lower = cholesky(mat, lower=True)
    half_logdet = float(np.sum(np.log(np.diag(lower))))
    return params.output_scale**2 * math.exp(
        prior.dim * math.log(params.lengthscale) - half_logdet
    )


def _product_integral_factors(params, prior):
    inv, half_logdet = _smoothed_inverse(params, prior, 0.5)
    detfac = math.exp(
        0.5 * prior.dim * math.log(0.5 * params.lengthscale**2) - half_logdet
    )
    inv_4l2 = 0.25 / params.lengthscale**2
    return inv, detfac, inv_4l2


def kernel_product_integral(params, prior, a, b):
    """Integral of ``k(a, s) k(s, b)`` against the measure (closed form).

    The product of the two SE factors is an unnormalised Gaussian in ``s``
    centred at ``(a+b)/2``, which integrates against the measure analytically.
    """
    a = as_points(a, prior.dim)[0]
    b = as_points(b, prior.dim)[0]
    inv, detfac, inv_4l2 = _product_integral_factors(params, prior)
    c = 0.5 * (a + b) - prior.mean
    quad = float(c @ inv @ c)
    sq = float(np.sum((a - b) ** 2))
    return params.output_scale**4 * detfac * math.exp(-sq * inv_4l2 - 0.5 * quad)


def product_integral_matrix(params, prior, x):
    """Matrix of :func:`kernel_product_integral` over all row pairs of ``x``."""
    x = as_points(np.asarray(x), prior.dim)
    inv, detfac, inv_4l2 = _product_integral_factors(params, prior)
    return kernels.product_integral_gram(
        x, params.output_scale**4, inv_4l2, detfac, prior.mean, inv
    )


def vanilla_bq_moments(model, prior):
    """Unwarped BQ moments of the integral under ``model``.

    Mean is ``z' K^-1 y`` and variance ``double_mean - z' K^-1 z`` with ``z``
    the kernel-measure integrals at the training inputs; variance is clamped
    at zero.
    """
    dm = kernel_prior_double_mean(model.params, prior)
    if model.n == 0:
        return IntegralEstimate(0.0, dm)
    z = kernel_prior_mean_vector(model.params, prior, model.inputs)
    mean = float(z @ model.weights)
    var = dm - float(z @ cho_solve((model.chol, True), z))
    return IntegralEstimate(mean, max(var, 0.0))


def wsabi_integral_mean(model, prior):
    """Closed-form integral mean of the warped surrogate.

    ``alpha + 0.5 w' G w`` where ``w`` are the g-model weights and ``G`` the
    pairwise kernel-product integrals at the training inputs.
    """
    g = model.g_model
    if g.n == 0:
        return model.alpha
    gamma = product_integral_matrix(g.params, prior, g.inputs)
    return model.alpha + 0.5 * float(g.weights @ gamma @ g.weights)


def wsabi_integral_variance(model, prior, n_samples=512, seed=0):
    """Monte Carlo integral variance of the warped surrogate.

    Averages ``m_g(x) C_g(x,x') m_g(x')`` over all pairs of ``n_samples``
    seeded draws from the measure. Diagnostic only; clamped at zero and
    deterministic given the seed.
    """
    g = model.g_model
    if g.n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    pts = prior.sample(int(n_samples), rng)
    mean, cov = g.posterior_joint(pts)
    val = float(mean @ cov @ mean) / float(n_samples) ** 2
    return max(val, 0.0)


def acquisition_batch(model, x):
    """Warped-surrogate acquisition ``m_g(x)^2 C_g(x,x)`` with gradients.

    Returns ``(values, gradients)`` for all rows of ``x``. Constant factors
    are dropped: only the argmax matters for point selection.
    """
    x = as_points(np.asarray(x), model.dim if model.g_model.n else None)
    g = model.g_model
    if g.n == 0:
        return np.zeros(x.shape[0]), np.zeros_like(x)
    return kernels.acq_values_grads(
        x, g.inputs, g.weights, g.k_inv, g.params.output_scale**2, g.params.lengthscale
    )


def acquisition(model, x):
    """Acquisition value and gradient at a single point."""
    x = as_points(x, model.dim if model.g_model.n else None)
    vals, grads = acquisition_batch(model, x)
    return float(vals[0]), grads[0]


def make_acquisition(model):
    """Batch acquisition evaluator ``f(points) -> (values, gradients)``."""

    def evaluate(x):
        return acquisition_batch(model, x)

    return evaluate

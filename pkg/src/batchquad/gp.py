"""Gaussian process regression with an isotropic squared-exponential kernel.

Models are noiseless interpolators: the only diagonal term is a numerical
jitter, which starts at ``1e-10 * output_scale**2`` and is escalated by
factors of 10 (at most six times) if the Cholesky factorisation fails.
Fitted models are immutable; refits return new model objects.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import kernels

JITTER_REL = 1e-10
MAX_JITTER_ESCALATIONS = 6
LOG_PARAM_BOUNDS = (-5.0, 5.0)

_LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Linear-algebra failure that survived jitter escalation."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class KernelParams:
    """Isotropic SE kernel hyperparameters (both in input/output units)."""

    output_scale: float
    lengthscale: float

    def __post_init__(self):
        if not (self.output_scale > 0 and np.isfinite(self.output_scale)):
            raise ValueError(f"output_scale must be positive, got {self.output_scale}")
        if not (self.lengthscale > 0 and np.isfinite(self.lengthscale)):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")


class GaussianMeasure:
    """Gaussian integration measure N(mean, covariance).

    ``covariance`` may be given as a scalar, a diagonal vector or a full
    symmetric positive-definite matrix; it is stored as a full matrix.
    """

    def __init__(self, mean, covariance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim == 0:
            cov = np.eye(mean.size) * float(cov)
        elif cov.ndim == 1:
            if cov.size != mean.size:
                raise ValueError("diagonal covariance length must match mean")
            cov = np.diag(cov)
        elif cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape must match mean dimension")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        self.mean = mean
        self.covariance = 0.5 * (cov + cov.T)
        try:
            self._chol = cholesky(self.covariance, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc

    @property
    def dim(self):
        return self.mean.size

    def sample(self, n, rng):
        """Draw ``n`` points, shape (n, dim)."""
        z = rng.standard_normal((n, self.dim))
        return self.mean[None, :] + z @ self._chol.T

    def logpdf(self, x):
        x = as_points(np.asarray(x), self.dim)
        diff = x - self.mean[None, :]
        sol = solve_triangular(self._chol, diff.T, lower=True)
        quad = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return -0.5 * (quad + logdet + self.dim * _LOG_2PI)


def as_points(x, dim=None):
    """Coerce to a (n, d) float array; 1-D input is a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected points of shape (n, d), got {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {x.shape[1]}")
    return x


def se_kernel(x, x2, params):
    """Isotropic squared-exponential kernel value between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    sq = float(np.sum((x - x2) ** 2))
    return params.output_scale**2 * math.exp(-0.5 * sq / params.lengthscale**2)


def _chol_with_escalation(gram, base_jitter):
    """Cholesky of ``gram + jitter*I`` with jitter escalation.

    Returns (lower factor, jitter actually used).
    """
    jitter = float(base_jitter)
    n = gram.shape[0]
    eye = np.eye(n)
    for attempt in range(MAX_JITTER_ESCALATIONS + 1):
        try:
            lower = cholesky(gram + jitter * eye, lower=True)
        except np.linalg.LinAlgError:
            if attempt == MAX_JITTER_ESCALATIONS:
                raise NumericalError(
                    f"Gram matrix not positive definite (final jitter {jitter:g})",
                    jitter=jitter,
                )
            jitter = jitter * 10.0 if jitter > 0 else JITTER_REL
            continue
        if np.all(np.isfinite(lower)):
            return lower, jitter
        raise NumericalError("non-finite Cholesky factor", jitter=jitter)
    raise AssertionError("unreachable")


class GpModel:
    """Fitted noiseless GP. Immutable after construction."""

    def __init__(self, inputs, targets, params, jitter, chol, weights):
        self.inputs = inputs
        self.targets = targets
        self.params = params
        self.jitter = jitter
        self.chol = chol
        self.weights = weights
        self._k_inv = None

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def k_inv(self):
        """Explicit inverse of the jittered Gram matrix (lazy, cached)."""
        if self._k_inv is None:
            if self.n == 0:
                self._k_inv = np.zeros((0, 0))
            else:
                self._k_inv = cho_solve((self.chol, True), np.eye(self.n))
        return self._k_inv

    def posterior(self, x):
        """Posterior (mean, variance) at a single point; variance clamped at 0."""
        x = as_points(x, self.dim if self.n else None)
        mean, var = self.posterior_batch(x)
        return float(mean[0]), float(var[0])

    def posterior_batch(self, x):
        """Posterior means and (clamped) variances at the rows of ``x``."""
        x = np.asarray(x, dtype=float)
        out2 = self.params.output_scale**2
        if self.n == 0:
            m = x.shape[0]
            return np.zeros(m), np.full(m, out2)
        k = kernels.se_cross(x, self.inputs, self.params.output_scale, self.params.lengthscale)
        mean = k @ self.weights
        v = solve_triangular(self.chol, k.T, lower=True)
        var = out2 - np.sum(v * v, axis=0)
        np.clip(var, 0.0, None, out=var)
        return mean, var

    def posterior_joint(self, x):
        """Posterior means and full cross-covariance matrix at ``x``."""
        x = np.asarray(x, dtype=float)
        prior_cov = kernels.se_gram(x, self.params.output_scale, self.params.lengthscale)
        if self.n == 0:
            return np.zeros(x.shape[0]), prior_cov
        k = kernels.se_cross(x, self.inputs, self.params.output_scale, self.params.lengthscale)
        mean = k @ self.weights
        v = solve_triangular(self.chol, k.T, lower=True)
        return mean, prior_cov - v.T @ v

    def mean_gradient(self, x):
        """Gradient of the posterior mean at a single point."""
        if self.n == 0:
            x = as_points(x)
            return np.zeros(x.shape[1])
        x = as_points(x, self.dim)
        k = kernels.se_cross(x, self.inputs, self.params.output_scale, self.params.lengthscale)
        kw = (k[0] * self.weights)[:, None]
        # d k(x, xi) / dx = -(x - xi) / l^2 * k(x, xi)
        return -np.sum((x[0][None, :] - self.inputs) * kw, axis=0) / self.params.lengthscale**2

    def with_observation(self, x, y):
        """New model with one appended observation (full refactorisation)."""
        x = as_points(x, self.dim if self.n else None)
        inputs = np.vstack([self.inputs, x]) if self.n else x
        targets = np.append(self.targets, float(y))
        return fit_gp(inputs, targets, self.params, jitter=self.jitter)


def fit_gp(inputs, targets, params, jitter=None):
    """Fit a noiseless GP; the Gram factorisation and weights are cached.

    ``jitter`` is the starting diagonal term (default ``1e-10 * output_scale**2``)
    and is escalated if the factorisation fails.
    """
    targets = np.asarray(targets, dtype=float).ravel()
    inputs = np.asarray(inputs, dtype=float)
    if inputs.size == 0:
        inputs = inputs.reshape(0, inputs.shape[1] if inputs.ndim == 2 else 1)
    inputs = as_points(inputs) if inputs.shape[0] else inputs
    if inputs.shape[0] != targets.size:
        raise ValueError("inputs and targets must have equal length")
    if not np.all(np.isfinite(inputs)) or not np.all(np.isfinite(targets)):
        raise ValueError("inputs and targets must be finite")
    if jitter is None:
        jitter = JITTER_REL * params.output_scale**2
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    n = inputs.shape[0]
    if n == 0:
        return GpModel(inputs, targets, params, float(jitter), np.zeros((0, 0)), np.zeros(0))
    gram = kernels.se_gram(inputs, params.output_scale, params.lengthscale)
    lower, used = _chol_with_escalation(gram, jitter)
    weights = cho_solve((lower, True), targets)
    return GpModel(inputs, targets, params, used, lower, weights)


def posterior(model, x):
    """Posterior (mean, variance) of ``model`` at ``x``."""
    return model.posterior(x)


def posterior_mean_gradient(model, x):
    """Gradient of the posterior mean of ``model`` at ``x``."""
    return model.mean_gradient(x)


def log_marginal_likelihood(model):
    """Standard GP log evidence of the fitted (jittered) model."""
    if model.n == 0:
        raise ValueError("log marginal likelihood requires a non-empty model")
    fit = float(model.targets @ model.weights)
    logdet_half = float(np.sum(np.log(np.diag(model.chol))))
    return -0.5 * fit - logdet_half - 0.5 * model.n * _LOG_2PI


def _lml_value_grad(log_params, sq_d, targets):
    """Negative LML and gradient in (log lengthscale, log output scale)."""
    log_l, log_s = log_params
    lengthscale = math.exp(log_l)
    out2 = math.exp(2.0 * log_s)
    n = targets.size
    corr = np.exp(-0.5 * sq_d / lengthscale**2)
    # jitter is tied to the output scale, so K = out2 * (corr + rel * I)
    gram = corr + JITTER_REL * np.eye(n)
    try:
        lower = cholesky(gram, lower=True)
    except np.linalg.LinAlgError:
        return 1e300, np.zeros(2)
    alpha = cho_solve((lower, True), targets)
    fit = float(targets @ alpha) / out2
    logdet_half = float(np.sum(np.log(np.diag(lower)))) + 0.5 * n * math.log(out2)
    lml = -0.5 * fit - logdet_half - 0.5 * n * _LOG_2PI
    # d/dlog_s: dK/dlog_s = 2 K  =>  y' K^-1 y - n
    d_log_s = fit - n
    # d/dlog_l: dK/dlog_l = out2 * corr o (sq_d / l^2)
    d_corr = corr * (sq_d / lengthscale**2)
    g_inv_d = cho_solve((lower, True), d_corr)
    alpha_term = float(alpha @ (d_corr @ alpha)) / out2
    d_log_l = 0.5 * (alpha_term - float(np.trace(g_inv_d)))
    if not np.isfinite(lml):
        return 1e300, np.zeros(2)
    return -lml, -np.array([d_log_l, d_log_s])


def optimise_hyperparams(inputs, targets, restarts, seed, initial=None):
    """Maximise the log marginal likelihood over log-space hyperparameters.

    Starts are the ``initial`` guess plus ``restarts`` draws uniform in the
    log-parameter box; the best optimised restart wins. If no restart improves
    on the best unoptimised start, that start is returned with a warning.
    """
    inputs = as_points(inputs)
    targets = np.asarray(targets, dtype=float).ravel()
    if inputs.shape[0] < 2:
        raise ValueError("hyperparameter optimisation needs at least 2 observations")
    if initial is None:
        initial = KernelParams(1.0, 1.0)
    rng = np.random.default_rng(seed)
    lo, hi = LOG_PARAM_BOUNDS
    starts = [
        np.array([math.log(initial.lengthscale), math.log(initial.output_scale)])
    ]
    starts.extend(rng.uniform(lo, hi, size=(int(restarts), 2)))
    sq_d = kernels.sq_dists(inputs, inputs)

    best_start_val = -np.inf
    best_start = starts[0]
    for s in starts:
        val = -_lml_value_grad(np.clip(s, lo, hi), sq_d, targets)[0]
        if val > best_start_val:
            best_start_val = val
            best_start = np.clip(s, lo, hi)

    best_val = -np.inf
    best = None
    for s in starts:
        res = minimize(
            _lml_value_grad,
            np.clip(s, lo, hi),
            args=(sq_d, targets),
            jac=True,
            method="L-BFGS-B",
            bounds=[(lo, hi), (lo, hi)],
        )
        if np.all(np.isfinite(res.x)) and np.isfinite(res.fun) and -res.fun > best_val:
            best_val = -res.fun
            best = res.x
    if best is None or best_val <= best_start_val:
        warnings.warn(
            "hyperparameter optimisation did not improve on its starting values",
            RuntimeWarning,
            stacklevel=2,
        )
        best = best_start
    return KernelParams(output_scale=math.exp(best[1]), lengthscale=math.exp(best[0]))


def sample_gp_prior(params, points, seed):
    """One joint draw of a zero-mean SE-kernel GP at ``points``."""
    points = as_points(points)
    gram = kernels.se_gram(points, params.output_scale, params.lengthscale)
    lower, _ = _chol_with_escalation(gram, JITTER_REL * params.output_scale**2)
    z = np.random.default_rng(seed).standard_normal(points.shape[0])
    return lower @ z

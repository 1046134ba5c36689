"""Benchmark problems: integrand, Gaussian prior and certified ground truth.

Three problem families:

* ``inmodel``: a 2-D draw from the square-root-warped surrogate's own prior,
  integrated against an isotropic Gaussian; truth by dense trapezoid grid.
* ``mixture``: a 4-D mixture of isotropic Gaussians with an analytic truth.
* ``evidence``: marginal likelihood of a GP over its two log hyperparameters,
  fitted to observations collected by expected-improvement optimisation of
  the Branin function; truth by trapezoid grid in log-sum-exp form.

Grid truths carry a refinement check (near-doubled resolution) that the
experiment runner executes before any method runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.special import logsumexp, ndtr

from . import kernels
from .gp import (
    GaussianMeasure,
    KernelParams,
    NumericalError,
    as_points,
    fit_gp,
    log_marginal_likelihood,
    sample_gp_prior,
)

_LOG_2PI = math.log(2.0 * math.pi)

INMODEL_DIM = 2
INMODEL_NODES = 300
INMODEL_BOX = 6.0
MIXTURE_DIM = 4
MIXTURE_PRIOR_SD = 2.0
EVIDENCE_BOX = 4.0
LOG_INTEGRAND_FLOOR = -700.0
BRANIN_DOMAIN = np.array([[-5.0, 10.0], [0.0, 15.0]])
BO_INITIAL_POINTS = 5
BO_TOTAL_POINTS = 20
BO_LENGTHSCALE = 2.0
EI_CANDIDATES = 4096


@dataclass(frozen=True)
class GroundTruth:
    """Certified integral value (in log space for the evidence problem)."""

    value: float
    method: str
    resolution: Optional[int] = None


@dataclass
class Problem:
    kind: str
    dim: int
    integrand: Callable
    prior: GaussianMeasure
    truth: GroundTruth
    log_error: bool = False
    log_integrand: Optional[Callable] = None
    refine_truth: Optional[Callable] = None
    meta: dict = field(default_factory=dict)


def verify_ground_truth(problem, rel_tol=1e-4):
    """Re-derive the truth at higher resolution; abort on disagreement."""
    if problem.refine_truth is None:
        return problem.truth.value
    refined = problem.refine_truth()
    denom = max(abs(problem.truth.value), abs(refined), 1e-12)
    if abs(refined - problem.truth.value) / denom >= rel_tol:
        raise NumericalError(
            f"{problem.kind} ground truth failed its refinement check: "
            f"{problem.truth.value!r} vs {refined!r}"
        )
    return refined


# ---------------------------------------------------------------------------
# quadrature grids
# ---------------------------------------------------------------------------


def trapezoid_grid_2d(f, lo, hi, res, chunk=200_000):
    """Tensor-product trapezoid integral of a batched 2-D function."""
    axis = np.linspace(lo, hi, res)
    h = axis[1] - axis[0]
    w = np.ones(res)
    w[0] = w[-1] = 0.5
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    weights = (np.outer(w, w) * h * h).ravel()
    total = 0.0
    for start in range(0, pts.shape[0], chunk):
        sl = slice(start, start + chunk)
        total += float(np.sum(f(pts[sl]) * weights[sl]))
    return total


# ---------------------------------------------------------------------------
# in-model problem
# ---------------------------------------------------------------------------


def gen_inmodel_problem(seed, grid_res=501):
    """2-D integrand built from a seeded surrogate-prior draw.

    A GP prior sample (unit scales) is taken at 300 prior-drawn nodes; its
    noiseless mean interpolant ``g`` defines the integrand ``0.5 * g**2``,
    which is non-negative by construction. Prior is N(0, I).
    """
    ss = np.random.SeedSequence(entropy=(int(seed) & 0xFFFFFFFF, 0x101))
    node_seed, draw_seed = [int(s) for s in ss.generate_state(2)]
    prior = GaussianMeasure(np.zeros(INMODEL_DIM), np.eye(INMODEL_DIM))
    params = KernelParams(1.0, 1.0)
    nodes = prior.sample(INMODEL_NODES, np.random.default_rng(node_seed))
    g_values = sample_gp_prior(params, nodes, draw_seed)
    interp = fit_gp(nodes, g_values, params)
    weights = interp.weights

    def integrand(x):
        x = as_points(np.asarray(x), INMODEL_DIM)
        m = kernels.se_cross(x, nodes, 1.0, 1.0) @ weights
        return 0.5 * m * m

    def weighted(x):
        return integrand(x) * np.exp(prior.logpdf(x))

    value = trapezoid_grid_2d(weighted, -INMODEL_BOX, INMODEL_BOX, grid_res)

    def refine():
        return trapezoid_grid_2d(weighted, -INMODEL_BOX, INMODEL_BOX, 2 * grid_res - 1)

    return Problem(
        kind="inmodel",
        dim=INMODEL_DIM,
        integrand=integrand,
        prior=prior,
        truth=GroundTruth(value, "grid", grid_res),
        refine_truth=refine,
    )


# ---------------------------------------------------------------------------
# Gaussian-mixture problem
# ---------------------------------------------------------------------------


def mixture_density(x, weights, means, variances):
    """Mixture of isotropic Gaussians, batched over the rows of ``x``."""
    x = as_points(np.asarray(x), means.shape[1])
    d = means.shape[1]
    sq = kernels.sq_dists(x, means)
    log_norm = -0.5 * d * (_LOG_2PI + np.log(variances))
    return np.exp(log_norm[None, :] - 0.5 * sq / variances[None, :]) @ weights


def mixture_prior_convolution(weights, means, variances, prior_var):
    """Analytic integral of the mixture against N(0, prior_var * I)."""
    d = means.shape[1]
    total_var = variances + prior_var
    log_norm = -0.5 * d * (_LOG_2PI + np.log(total_var))
    sq = np.sum(means**2, axis=1)
    return float(np.exp(log_norm - 0.5 * sq / total_var) @ weights)


def _log_mixture_prior_convolution(weights, means, variances, prior_var):
    d = means.shape[1]
    total_var = variances + prior_var
    logs = (
        np.log(weights)
        - 0.5 * d * (_LOG_2PI + np.log(total_var))
        - 0.5 * np.sum(means**2, axis=1) / total_var
    )
    return float(logsumexp(logs))


def gen_mixture_problem(seed):
    """4-D mixture of 10..15 isotropic Gaussians with analytic truth.

    Component variances are uniform on [1, 4], means uniform in the
    [-3, 3] box, weights equal; prior is N(0, 4 I).
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(int(seed) & 0xFFFFFFFF, 0x202))
    )
    k = int(rng.integers(10, 16))
    variances = rng.uniform(1.0, 4.0, size=k)
    means = rng.uniform(-3.0, 3.0, size=(k, MIXTURE_DIM))
    weights = np.full(k, 1.0 / k)
    prior = GaussianMeasure(np.zeros(MIXTURE_DIM), MIXTURE_PRIOR_SD**2 * np.eye(MIXTURE_DIM))

    def integrand(x):
        return mixture_density(x, weights, means, variances)

    value = mixture_prior_convolution(weights, means, variances, MIXTURE_PRIOR_SD**2)

    def cross_check():
        # same quantity assembled in log space; guards the linear-space sum
        return math.exp(
            _log_mixture_prior_convolution(weights, means, variances, MIXTURE_PRIOR_SD**2)
        )

    return Problem(
        kind="mixture",
        dim=MIXTURE_DIM,
        integrand=integrand,
        prior=prior,
        truth=GroundTruth(value, "analytic"),
        refine_truth=cross_check,
        meta={"n_components": k, "means": means, "variances": variances},
    )


# ---------------------------------------------------------------------------
# GP-evidence problem
# ---------------------------------------------------------------------------


def branin(x):
    """Standard Branin function; accepts one point or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = as_points(x, 2)
    x1, x2 = pts[:, 0], pts[:, 1]
    a = 1.0
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    r = 6.0
    s = 10.0
    t = 1.0 / (8.0 * math.pi)
    vals = a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1.0 - t) * np.cos(x1) + s
    return float(vals[0]) if single else vals


def _expected_improvement(best, mean, sd):
    safe = np.where(sd > 0, sd, 1.0)
    z = (best - mean) / safe
    phi = np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)
    ei = (best - mean) * ndtr(z) + safe * phi
    return np.where(sd > 0, ei, np.maximum(best - mean, 0.0))


def _uniform_in_domain(rng, n):
    lo, hi = BRANIN_DOMAIN[:, 0], BRANIN_DOMAIN[:, 1]
    return lo[None, :] + rng.random((n, 2)) * (hi - lo)[None, :]


def collect_branin_dataset(seed):
    """Gather 20 Branin evaluations: 5 uniform + 15 expected-improvement.

    The optimisation GP uses a fixed lengthscale of 2 and output scale equal
    to the sample sd of the observations so far (observations are centred
    before fitting). Duplicate proposals are replaced by fresh uniform draws.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(int(seed) & 0xFFFFFFFF, 0x303))
    )
    x = _uniform_in_domain(rng, BO_INITIAL_POINTS)
    y = branin(x)
    while x.shape[0] < BO_TOTAL_POINTS:
        sd = float(np.std(y))
        params = KernelParams(output_scale=max(sd, 1e-6), lengthscale=BO_LENGTHSCALE)
        centred = y - float(np.mean(y))
        model = fit_gp(x, centred, params)
        candidates = _uniform_in_domain(rng, EI_CANDIDATES)
        mean, var = model.posterior_batch(candidates)
        ei = _expected_improvement(float(np.min(centred)), mean, np.sqrt(var))
        pick = candidates[int(np.argmax(ei))]
        while np.min(np.sum((x - pick[None, :]) ** 2, axis=1)) < 1e-12:
            pick = _uniform_in_domain(rng, 1)[0]
        x = np.vstack([x, pick])
        y = np.append(y, branin(pick))
    return x, y


def _lml_grid(x_data, y_data, axis):
    """Log marginal likelihood on the (log lengthscale, log scale) grid.

    One correlation-matrix Cholesky per lengthscale; the output-scale axis is
    then closed form, matching ``fit_gp`` with its relative jitter exactly.
    """
    n = y_data.size
    sq = kernels.sq_dists(x_data, x_data)
    quads = np.empty(axis.size)
    half_logdets = np.empty(axis.size)
    eye = np.eye(n)
    for i, log_l in enumerate(axis):
        corr = np.exp(-0.5 * sq / math.exp(2.0 * log_l))
        jit = 1e-10
        for attempt in range(7):
            try:
                lower = cholesky(corr + jit * eye, lower=True)
                break
            except np.linalg.LinAlgError:
                if attempt == 6:
                    raise NumericalError("correlation matrix not positive definite")
                jit *= 10.0
        quads[i] = float(y_data @ cho_solve((lower, True), y_data))
        half_logdets[i] = float(np.sum(np.log(np.diag(lower))))
    sig2 = np.exp(2.0 * axis)
    return (
        -0.5 * quads[:, None] / sig2[None, :]
        - half_logdets[:, None]
        - n * axis[None, :]
        - 0.5 * n * _LOG_2PI
    )


def _log_evidence_from_grid(lml, axis, shift):
    res = axis.size
    h = axis[1] - axis[0]
    w = np.full(res, math.log(h))
    w[0] += math.log(0.5)
    w[-1] += math.log(0.5)
    log_prior = -0.5 * (axis[:, None] ** 2 + axis[None, :] ** 2) - _LOG_2PI
    log_f = np.maximum(lml - shift, LOG_INTEGRAND_FLOOR)
    return float(logsumexp(log_f + log_prior + w[:, None] + w[None, :]))


def gen_evidence_problem(seed, grid_res=501):
    """Marginal likelihood of a 20-point GP over its log hyperparameters.

    The integrand is the (normalised) model evidence surface of an SE-kernel
    GP on the Branin dataset as a function of (log lengthscale, log output
    scale); observations are standardised and the surface is scaled by its
    grid maximum so it stays representable, with a hard floor far below the
    scale of the integral. The prior on the log hyperparameters is N(0, I);
    errors for this problem are measured in log space.
    """
    x_data, y_raw = collect_branin_dataset(seed)
    y_data = (y_raw - float(np.mean(y_raw))) / float(np.std(y_raw))
    prior = GaussianMeasure(np.zeros(2), np.eye(2))

    axis = np.linspace(-EVIDENCE_BOX, EVIDENCE_BOX, grid_res)
    lml = _lml_grid(x_data, y_data, axis)
    shift = float(np.max(lml))
    value = _log_evidence_from_grid(lml, axis, shift)

    def log_integrand(theta):
        theta = as_points(np.asarray(theta), 2)
        out = np.empty(theta.shape[0])
        for i, (log_l, log_s) in enumerate(theta):
            params = KernelParams(output_scale=math.exp(log_s), lengthscale=math.exp(log_l))
            out[i] = log_marginal_likelihood(fit_gp(x_data, y_data, params))
        return np.maximum(out - shift, LOG_INTEGRAND_FLOOR)

    def integrand(theta):
        return np.exp(log_integrand(theta))

    def refine():
        fine = np.linspace(-EVIDENCE_BOX, EVIDENCE_BOX, 2 * grid_res - 1)
        return _log_evidence_from_grid(_lml_grid(x_data, y_data, fine), fine, shift)

    return Problem(
        kind="evidence",
        dim=2,
        integrand=integrand,
        prior=prior,
        truth=GroundTruth(value, "grid", grid_res),
        log_error=True,
        log_integrand=log_integrand,
        refine_truth=refine,
        meta={"x_data": x_data, "y_data": y_data, "shift": shift},
    )


GENERATORS = {
    "inmodel": gen_inmodel_problem,
    "mixture": lambda seed, grid_res=501: gen_mixture_problem(seed),
    "evidence": gen_evidence_problem,
}

"""Independent quadrature oracles and model builders for the tests.

Everything here is deliberately written from scratch with plain numpy
(broadcast kernels, dense solves, tensor-product trapezoid grids) so the
closed forms in the package are checked against a separate code path.
"""

import numpy as np

from batchquad.gp import GaussianMeasure, KernelParams, fit_gp
from batchquad.quadrature import WarpedModel

SPAN_1D = 14.0
NODES_1D = 8001
SPAN_2D = 10.0
NODES_2D = 501
PAIR_NODES_1D = 2001


def se_k(a, b, params):
    """Pairwise SE kernel from first principles (no package kernels)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return params.output_scale**2 * np.exp(-0.5 * sq / params.lengthscale**2)


def gauss_pdf(x, mean, var):
    """Product of independent 1-D normal densities along the last axis."""
    x = np.atleast_2d(x)
    mean = np.atleast_1d(mean)
    var = np.atleast_1d(var)
    z = (x - mean[None, :]) ** 2 / var[None, :]
    norm = np.prod(np.sqrt(2.0 * np.pi * var))
    return np.exp(-0.5 * np.sum(z, axis=1)) / norm


def prior_diag(prior):
    cov = prior.covariance
    assert np.allclose(cov, np.diag(np.diag(cov))), "oracle expects a diagonal prior"
    return prior.mean, np.diag(cov)


def trap_axis(span, nodes):
    axis = np.linspace(-span, span, nodes)
    w = np.full(nodes, axis[1] - axis[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return axis, w


def integrate_grid(f, dim, span, nodes):
    """Tensor-product trapezoid integral of a batched function on [-span, span]^dim."""
    axis, w = trap_axis(span, nodes)
    if dim == 1:
        return float(w @ f(axis[:, None]))
    if dim == 2:
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        vals = np.concatenate([f(pts[i : i + 200_000]) for i in range(0, len(pts), 200_000)])
        return float(w @ vals.reshape(nodes, nodes) @ w)
    raise ValueError("oracle grids support dim 1 or 2")


def kernel_prior_mean_quad(params, prior, x):
    """Quadrature oracle for the kernel-measure integral at point ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean, var = prior_diag(prior)
    span, nodes = (SPAN_1D, NODES_1D) if prior.dim == 1 else (SPAN_2D, NODES_2D)

    def f(s):
        return se_k(s, x[None, :], params)[:, 0] * gauss_pdf(s, mean, var)

    return integrate_grid(f, prior.dim, span, nodes)


def kernel_double_mean_quad(params, prior):
    """Per-dimension factorised pair quadrature for the double kernel integral."""
    mean, var = prior_diag(prior)
    axis, w = trap_axis(SPAN_1D if prior.dim == 1 else SPAN_2D, PAIR_NODES_1D)
    total = params.output_scale**2
    for j in range(prior.dim):
        gj = np.exp(-0.5 * (axis - mean[j]) ** 2 / var[j]) / np.sqrt(2.0 * np.pi * var[j])
        ker = np.exp(-0.5 * (axis[:, None] - axis[None, :]) ** 2 / params.lengthscale**2)
        total *= float((w * gj) @ ker @ (w * gj))
    return total


def kernel_product_quad(params, prior, a, b):
    """Per-dimension factorised quadrature for the kernel-product integral."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    mean, var = prior_diag(prior)
    axis, w = trap_axis(SPAN_1D, NODES_1D)
    total = params.output_scale**4
    inv_2l2 = 0.5 / params.lengthscale**2
    for j in range(prior.dim):
        gj = np.exp(-0.5 * (axis - mean[j]) ** 2 / var[j]) / np.sqrt(2.0 * np.pi * var[j])
        fj = np.exp(-((axis - a[j]) ** 2 + (axis - b[j]) ** 2) * inv_2l2)
        total *= float(np.sum(w * fj * gj))
    return total


def dense_posterior_mean(model, x):
    """Posterior mean via a dense solve, independent of the cached Cholesky."""
    gram = se_k(model.inputs, model.inputs, model.params) + model.jitter * np.eye(model.n)
    alpha = np.linalg.solve(gram, model.targets)
    return se_k(x, model.inputs, model.params) @ alpha


def vanilla_mean_quad(model, prior):
    """Quadrature of the posterior mean against the measure (dense solves)."""
    mean, var = prior_diag(prior)
    span, nodes = (SPAN_1D, NODES_1D) if prior.dim == 1 else (SPAN_2D, NODES_2D)

    def f(s):
        return dense_posterior_mean(model, s) * gauss_pdf(s, mean, var)

    return integrate_grid(f, prior.dim, span, nodes)


def vanilla_var_double_quad_1d(model, prior):
    """Full pair-grid quadrature of the posterior covariance (1-D only)."""
    mean, var = prior_diag(prior)
    axis, w = trap_axis(SPAN_1D, PAIR_NODES_1D)
    pts = axis[:, None]
    prior_gram = se_k(pts, pts, model.params)
    if model.n:
        gram = se_k(model.inputs, model.inputs, model.params) + model.jitter * np.eye(model.n)
        cross = se_k(pts, model.inputs, model.params)
        cov = prior_gram - cross @ np.linalg.solve(gram, cross.T)
    else:
        cov = prior_gram
    gw = w * gauss_pdf(pts, mean, var)
    return float(gw @ cov @ gw)


def warped_mean_quad(model, prior):
    """Quadrature of the warped surrogate's implied integrand against the measure."""
    mean, var = prior_diag(prior)
    span, nodes = (SPAN_1D, NODES_1D) if prior.dim == 1 else (SPAN_2D, NODES_2D)

    def f(s):
        m = dense_posterior_mean(model.g_model, s) if model.g_model.n else np.zeros(len(s))
        return (model.alpha + 0.5 * m**2) * gauss_pdf(s, mean, var)

    return integrate_grid(f, prior.dim, span, nodes)


def warped_var_double_quad(model, prior, nodes_1d=2001, nodes_2d=121):
    """Pair-grid quadrature of m_g C_g m_g' against the measure (1-D or 2-D)."""
    mean, var = prior_diag(prior)
    g = model.g_model
    if prior.dim == 1:
        axis, w = trap_axis(SPAN_1D, nodes_1d)
        pts = axis[:, None]
        weights = w
    else:
        axis, w = trap_axis(8.0, nodes_2d)
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        weights = np.outer(w, w).ravel()
    gram = se_k(g.inputs, g.inputs, g.params) + g.jitter * np.eye(g.n)
    cross = se_k(pts, g.inputs, g.params)
    solve = np.linalg.solve(gram, cross.T)
    m = cross @ np.linalg.solve(gram, g.targets)
    cov = se_k(pts, pts, g.params) - cross @ solve
    u = weights * gauss_pdf(pts, mean, var) * m
    return float(u @ cov @ u)


def random_prior(rng, dim):
    mean = rng.uniform(-0.5, 0.5, dim)
    var = rng.uniform(0.6, 1.8, dim)
    return GaussianMeasure(mean, var)


def random_params(rng):
    return KernelParams(
        output_scale=rng.uniform(0.6, 1.6), lengthscale=rng.uniform(0.6, 1.4)
    )


def separated_points(rng, n, dim, box=2.0):
    """Jittered-lattice points with pairwise separation >= 0.51 so Gram
    matrices stay well conditioned (closed form vs oracle comparisons then
    resolve to ~1e-8). Lattice choice avoids rejection sampling, which can
    deadlock in 1-D."""
    pitch = 0.55
    per_axis = int(2 * box / pitch)
    cells = rng.choice(per_axis**dim, size=n, replace=False)
    coords = np.stack(
        [((cells // per_axis**k) % per_axis) for k in range(dim)], axis=1
    ).astype(float)
    centers = -box + pitch * (coords + 0.5)
    return centers + rng.uniform(-0.02, 0.02, size=(n, dim))


def random_gp_model(rng, dim, n_min=3, n_max=7):
    n = int(rng.integers(n_min, n_max + 1))
    x = separated_points(rng, n, dim)
    y = rng.normal(size=n)
    return fit_gp(x, y, random_params(rng))


def random_warped_model(rng, dim, n_min=3, n_max=7, min_fraction=0.8):
    n = int(rng.integers(n_min, n_max + 1))
    x = separated_points(rng, n, dim)
    ell = rng.uniform(0.05, 2.0, n)
    return WarpedModel.fit(x, ell, random_params(rng), min_fraction)

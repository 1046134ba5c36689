"""Hot array kernels for the squared-exponential surrogate.

Every kernel exists twice: a numba ``@njit`` implementation and a pure-numpy
fallback. The active backend is chosen once at import time from the
``BATCHQUAD_BACKEND`` environment variable (``"numba"`` or ``"numpy"``;
default is numba when importable) and can be switched at runtime with
:func:`set_backend`, which the backend benchmark and the equivalence tests
rely on. Both paths compute the same quantities; they may differ in the last
few ulps because of summation order.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.spatial.distance import cdist

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but degrade anyway
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _sq_dists_np(a, b):
    return cdist(a, b, "sqeuclidean")


def _se_gram_np(x, output_scale, lengthscale):
    d = _sq_dists_np(x, x)
    return output_scale**2 * np.exp(-0.5 * d / lengthscale**2)


def _se_cross_np(a, b, output_scale, lengthscale):
    d = _sq_dists_np(a, b)
    return output_scale**2 * np.exp(-0.5 * d / lengthscale**2)


def _prior_kernel_mean_np(x, out2, detfac, mean, m_inv):
    # out2 * detfac * exp(-0.5 (x-m)^T Minv (x-m)) per row of x
    diff = x - mean[None, :]
    quad = np.einsum("ij,jk,ik->i", diff, m_inv, diff)
    return out2 * detfac * np.exp(-0.5 * quad)


def _product_integral_gram_np(x, out4, inv_4l2, detfac, mean, m_inv):
    # out4 * exp(-||xi-xj||^2 / (4 l^2)) * detfac
    #      * exp(-0.5 (c-m)^T Minv (c-m)),  c = (xi+xj)/2
    d = _sq_dists_np(x, x)
    centers = 0.5 * (x[:, None, :] + x[None, :, :]) - mean[None, None, :]
    quad = np.einsum("ijk,kl,ijl->ij", centers, m_inv, centers)
    return out4 * detfac * np.exp(-d * inv_4l2 - 0.5 * quad)


def _acq_values_grads_np(a, x, w, k_inv, out2, lengthscale):
    # WSABI acquisition m_g(a)^2 * C_g(a,a) and its gradient, batched over
    # the rows of ``a``. Variance uses an explicit K^-1 (precomputed from the
    # Cholesky factor); negative round-off variances are clamped.
    inv_l2 = 1.0 / lengthscale**2
    k = _se_cross_np(a, x, np.sqrt(out2), lengthscale)
    m = k @ w
    beta = k @ k_inv
    var = out2 - np.sum(k * beta, axis=1)
    np.clip(var, 0.0, None, out=var)
    kw = k * w[None, :]
    dm = -inv_l2 * (a * m[:, None] - kw @ x)
    kb = k * beta
    dvar = 2.0 * inv_l2 * (a * np.sum(kb, axis=1)[:, None] - kb @ x)
    vals = m * m * var
    grads = (2.0 * m * var)[:, None] * dm + (m * m)[:, None] * dvar
    return vals, grads


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sq_dists_nb(a, b):
    na, d = a.shape
    nb = b.shape[0]
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            s = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                s += diff * diff
            out[i, j] = s
    return out


@njit(cache=True)
def _se_gram_nb(x, output_scale, lengthscale):
    n = x.shape[0]
    d = x.shape[1]
    out2 = output_scale * output_scale
    inv_2l2 = 0.5 / (lengthscale * lengthscale)
    out = np.empty((n, n))
    for i in range(n):
        out[i, i] = out2
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                s += diff * diff
            v = out2 * np.exp(-s * inv_2l2)
            out[i, j] = v
            out[j, i] = v
    return out


@njit(cache=True)
def _se_cross_nb(a, b, output_scale, lengthscale):
    na, d = a.shape
    nb = b.shape[0]
    out2 = output_scale * output_scale
    inv_2l2 = 0.5 / (lengthscale * lengthscale)
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            s = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                s += diff * diff
            out[i, j] = out2 * np.exp(-s * inv_2l2)
    return out


@njit(cache=True)
def _prior_kernel_mean_nb(x, out2, detfac, mean, m_inv):
    n, d = x.shape
    out = np.empty(n)
    diff = np.empty(d)
    for i in range(n):
        for k in range(d):
            diff[k] = x[i, k] - mean[k]
        quad = 0.0
        for k in range(d):
            row = 0.0
            for l in range(d):
                row += m_inv[k, l] * diff[l]
            quad += diff[k] * row
        out[i] = out2 * detfac * np.exp(-0.5 * quad)
    return out


@njit(cache=True)
def _product_integral_gram_nb(x, out4, inv_4l2, detfac, mean, m_inv):
    n, d = x.shape
    out = np.empty((n, n))
    c = np.empty(d)
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                s += diff * diff
                c[k] = 0.5 * (x[i, k] + x[j, k]) - mean[k]
            quad = 0.0
            for k in range(d):
                row = 0.0
                for l in range(d):
                    row += m_inv[k, l] * c[l]
                quad += c[k] * row
            v = out4 * detfac * np.exp(-s * inv_4l2 - 0.5 * quad)
            out[i, j] = v
            out[j, i] = v
    return out


@njit(cache=True)
def _acq_values_grads_nb(a, x, w, k_inv, out2, lengthscale):
    na, d = a.shape
    n = x.shape[0]
    inv_l2 = 1.0 / (lengthscale * lengthscale)
    vals = np.empty(na)
    grads = np.empty((na, d))
    k = np.empty(n)
    beta = np.empty(n)
    for i in range(na):
        m = 0.0
        for j in range(n):
            s = 0.0
            for l in range(d):
                diff = a[i, l] - x[j, l]
                s += diff * diff
            k[j] = out2 * np.exp(-0.5 * s * inv_l2)
            m += w[j] * k[j]
        var = out2
        for j in range(n):
            b = 0.0
            for l in range(n):
                b += k_inv[j, l] * k[l]
            beta[j] = b
            var -= k[j] * b
        if var < 0.0:
            var = 0.0
        vals[i] = m * m * var
        for l in range(d):
            dm = 0.0
            dvar = 0.0
            for j in range(n):
                dk = -(a[i, l] - x[j, l]) * k[j] * inv_l2
                dm += w[j] * dk
                dvar -= 2.0 * beta[j] * dk
            grads[i, l] = 2.0 * m * var * dm + m * m * dvar
    return vals, grads


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_BACKENDS = {
    "numpy": {
        "sq_dists": _sq_dists_np,
        "se_gram": _se_gram_np,
        "se_cross": _se_cross_np,
        "prior_kernel_mean": _prior_kernel_mean_np,
        "product_integral_gram": _product_integral_gram_np,
        "acq_values_grads": _acq_values_grads_np,
    },
}
if HAS_NUMBA:
    _BACKENDS["numba"] = {
        "sq_dists": _sq_dists_nb,
        "se_gram": _se_gram_nb,
        "se_cross": _se_cross_nb,
        "prior_kernel_mean": _prior_kernel_mean_nb,
        "product_integral_gram": _product_integral_gram_nb,
        "acq_values_grads": _acq_values_grads_nb,
    }

_active = None


def available_backends():
    return sorted(_BACKENDS)


def backend():
    """Name of the active backend ("numba" or "numpy")."""
    return _active


def set_backend(name):
    """Switch the kernel backend. Mainly for benchmarks and tests."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


def _default_backend():
    choice = os.environ.get("BATCHQUAD_BACKEND", "").strip().lower()
    if choice:
        if choice not in _BACKENDS:
            raise ValueError(
                f"BATCHQUAD_BACKEND={choice!r} not available; "
                f"choose from {available_backends()}"
            )
        return choice
    return "numba" if HAS_NUMBA else "numpy"


set_backend(_default_backend())


def _dispatch(name, *args):
    return _BACKENDS[_active][name](*args)


def sq_dists(a, b):
    """Pairwise squared euclidean distances between rows of ``a`` and ``b``."""
    return _dispatch("sq_dists", a, b)


def se_gram(x, output_scale, lengthscale):
    """Squared-exponential Gram matrix with exact ``output_scale**2`` diagonal."""
    return _dispatch("se_gram", x, float(output_scale), float(lengthscale))


def se_cross(a, b, output_scale, lengthscale):
    """Cross-covariance matrix k(a_i, b_j) for the isotropic SE kernel."""
    return _dispatch("se_cross", a, b, float(output_scale), float(lengthscale))


def prior_kernel_mean(x, out2, detfac, mean, m_inv):
    """Rows of ``out2 * detfac * exp(-0.5 (x-mean)' m_inv (x-mean))``.

    The caller supplies the determinant factor and inverse of the smoothing
    matrix so that this stays a pure array kernel.
    """
    return _dispatch("prior_kernel_mean", x, float(out2), float(detfac), mean, m_inv)


def product_integral_gram(x, out4, inv_4l2, detfac, mean, m_inv):
    """Matrix of pairwise kernel-product integrals against a Gaussian measure."""
    return _dispatch(
        "product_integral_gram", x, float(out4), float(inv_4l2), float(detfac), mean, m_inv
    )


def acq_values_grads(a, x, w, k_inv, out2, lengthscale):
    """Warped-surrogate acquisition values and gradients, batched over ``a``."""
    return _dispatch("acq_values_grads", a, x, w, k_inv, float(out2), float(lengthscale))

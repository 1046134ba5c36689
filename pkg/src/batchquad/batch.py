"""Batch point selection and the outer quadrature loop.

Two batch strategies over the warped-surrogate acquisition:

* Kriging Believer: after each selection the point is hallucinated into the
  g-space GP at its posterior mean, shrinking the variance there before the
  next selection. Hallucinations are discarded once the batch is evaluated.
* Local penalisation: each selection adds a cone ``gamma * L * ||x - x0||``
  (L a locally estimated Lipschitz constant of the acquisition) and the next
  point maximises a soft minimum of the acquisition and all cones.

The outer loop evaluates the integrand batch by batch under a fixed
evaluation budget, re-warping, refitting and re-optimising hyperparameters
after every batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .gp import GaussianMeasure, NumericalError, as_points, optimise_hyperparams
from .optim import maximise, sample_starts
from .quadrature import (
    WarpedModel,
    make_acquisition,
    warp_targets,
    wsabi_integral_mean,
    wsabi_integral_variance,
)

SOFTMIN_FLOOR = 1e-12
LIPSCHITZ_ITERS = 30
LIPSCHITZ_STEP_FRAC = 0.1
LIPSCHITZ_FD_FRAC = 1e-4
NUDGE_RADIUS_FRAC = 1e-9
NUDGE_STEP_FRAC = 1e-6

_KB_NAMES = {"kb", "kriging-believer"}
_LP_NAMES = {"lp", "local-penalisation"}


class IntegrandError(RuntimeError):
    """Integrand returned a negative or non-finite value; run aborted."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class LipschitzCone:
    """Linear cone ``slope_fraction * lipschitz * ||x - center||``."""

    center: np.ndarray
    lipschitz: float
    slope_fraction: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.lipschitz < 0:
            raise ValueError("lipschitz constant must be non-negative")
        if not 0 < self.slope_fraction <= 1:
            raise ValueError("slope_fraction must lie in (0, 1]")

    @property
    def slope(self):
        return self.slope_fraction * self.lipschitz

    def value_batch(self, x):
        """Cone values and gradients at the rows of ``x``.

        The gradient at the center is undefined; zero is returned there.
        """
        x = np.asarray(x, dtype=float)
        diff = x - self.center[None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        vals = self.slope * dist
        safe = np.where(dist > 0.0, dist, 1.0)
        grads = self.slope * diff / safe[:, None]
        grads[dist == 0.0] = 0.0
        return vals, grads


@dataclass(frozen=True)
class PenalisedAcquisition:
    """Soft minimum of a base acquisition and a set of Lipschitz cones.

    Combination uses the l_p "norm" with negative even ``p``; every component
    is floored at ``floor`` first, and the result is exactly ``floor``
    wherever any component hits it (the true minimum limit is 0 at cone
    centers). With no cones this evaluates identically to the base above the
    floor.
    """

    base: object
    cones: tuple = ()
    p: int = -6
    floor: float = SOFTMIN_FLOOR

    def __post_init__(self):
        p = self.p
        if not (isinstance(p, (int, np.integer)) and p < 0 and p % 2 == 0):
            raise ValueError("p must be a negative even integer")
        if not 0 < self.floor:
            raise ValueError("floor must be positive")

    def with_cone(self, cone):
        return replace(self, cones=self.cones + (cone,))

    def evaluate(self, x):
        """Penalised values and gradients at the rows of ``x``."""
        x = np.asarray(x, dtype=float)
        vals, grads = self.base(x)
        comp_vals = [np.asarray(vals, dtype=float)]
        comp_grads = [np.asarray(grads, dtype=float)]
        for cone in self.cones:
            cv, cg = cone.value_batch(x)
            comp_vals.append(cv)
            comp_grads.append(cg)
        v = np.maximum(np.stack(comp_vals), self.floor)  # (k, m)
        g = np.stack(comp_grads)  # (k, m, d)
        return _softmin(v, g, self.p, self.floor)


def _softmin(v, g, p, floor):
    """Stable l_p soft minimum over axis 0 of ``v`` with chain-rule gradients.

    Factoring out the column minimum keeps all powers of ratios >= 1, so
    large negative ``p`` cannot overflow.
    """
    vmin = np.min(v, axis=0)  # (m,)
    r = v / vmin[None, :]
    rp = r ** float(p)
    s = np.sum(rp, axis=0)
    vals = vmin * s ** (1.0 / p)
    # d val / d v_j = s^(1/p - 1) * r_j^(p - 1)
    dv = s[None, :] ** (1.0 / p - 1.0) * r ** float(p - 1)
    grads = np.einsum("km,kmd->md", dv, g)
    at_floor = vmin <= floor
    vals = np.where(at_floor, floor, vals)
    grads[at_floor] = 0.0
    return vals, grads


def estimate_local_lipschitz(acq, x0, lengthscale):
    """Largest acquisition-gradient norm found near ``x0``.

    Runs a fixed number of normalised gradient-ascent steps on
    ``h(x) = ||grad acq(x)||``, projected onto the ball of radius
    ``lengthscale`` around ``x0``; the gradient of ``h`` is taken by central
    finite differences. Returns the best ``h`` seen (at least ``h(x0)``).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    fd = LIPSCHITZ_FD_FRAC * lengthscale
    step = LIPSCHITZ_STEP_FRAC * lengthscale

    def h(pts):
        _, grads = acq(pts)
        return np.sqrt(np.sum(np.asarray(grads, dtype=float) ** 2, axis=1))

    best = float(h(x0[None, :])[0])
    if not np.isfinite(best):
        return 0.0
    x = x0.copy()
    eye = np.eye(d)
    for _ in range(LIPSCHITZ_ITERS):
        probes = np.vstack([x[None, :] + fd * eye, x[None, :] - fd * eye])
        hv = h(probes)
        if not np.all(np.isfinite(hv)):
            break
        grad = (hv[:d] - hv[d:]) / (2.0 * fd)
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            break
        x = x + step * grad / norm
        offset = x - x0
        dist = float(np.linalg.norm(offset))
        if dist > lengthscale:
            x = x0 + offset * (lengthscale / dist)
        val = float(h(x[None, :])[0])
        if not np.isfinite(val):
            break
        best = max(best, val)
    return best


def add_penaliser(pa, x0, acq_for_l, lengthscale, slope_fraction=0.5):
    """Return ``pa`` with a cone at ``x0`` appended.

    The cone slope is ``slope_fraction`` times a locally estimated Lipschitz
    constant of ``acq_for_l``; a zero estimate falls back to a tiny slope so
    the penaliser still pins ``x0`` to the floor.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise ValueError("cone center must be finite")
    lipschitz = estimate_local_lipschitz(acq_for_l, x0, lengthscale)
    if slope_fraction * lipschitz == 0.0:
        base_val = float(np.asarray(acq_for_l(x0[None, :])[0])[0])
        scale = max(abs(base_val), 1.0)
        lipschitz = 1e-6 * scale / slope_fraction
    return pa.with_cone(LipschitzCone(x0, lipschitz, slope_fraction))


@dataclass(frozen=True)
class BatchConfig:
    """Settings for one batch-quadrature run."""

    batch_size: int
    method: str
    budget: int
    min_fraction: float = 0.8
    slope_fraction: float = 0.5
    p: int = -6
    seed: int = 0
    initial_design: int = 3
    hyperopt_restarts: int = 5
    variance_samples: int = 512

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.budget < self.batch_size:
            raise ValueError("budget must cover at least one batch")
        if self.method not in _KB_NAMES | _LP_NAMES:
            raise ValueError(f"unknown method {self.method!r}")
        if self.initial_design < 1:
            raise ValueError("initial design needs at least one point")


@dataclass(frozen=True)
class BatchRecord:
    batch_index: int
    n_evaluations: int
    estimate: float
    variance: float
    wallclock_ms: float


@dataclass
class QuadratureTrace:
    records: list = field(default_factory=list)

    @property
    def final(self):
        return self.records[-1]


def _derived_seed(seed, *tags):
    return int(np.random.SeedSequence(entropy=(int(seed) & 0xFFFFFFFF, *tags)).generate_state(1)[0])


def _nudge_starts(starts, centers, lengthscale, seed):
    """Move starts off cone centers, where the objective is not differentiable."""
    if not centers:
        return starts
    starts = np.array(starts, dtype=float)
    rng = np.random.default_rng(_derived_seed(seed, 0xD1CE))
    for center in centers:
        dist = np.linalg.norm(starts - center[None, :], axis=1)
        hit = dist < NUDGE_RADIUS_FRAC * lengthscale
        for i in np.flatnonzero(hit):
            direction = rng.standard_normal(starts.shape[1])
            direction /= np.linalg.norm(direction)
            starts[i] = starts[i] + NUDGE_STEP_FRAC * lengthscale * direction
    return starts


def _maximise_acq(evaluate, prior, d, seed, cone_centers, lengthscale):
    starts = sample_starts(prior, d, seed)
    starts = _nudge_starts(starts, cone_centers, lengthscale, seed)
    x, val = maximise(evaluate, prior, d, seed, starts=starts)
    if not (np.all(np.isfinite(x)) and np.isfinite(val)):
        retry_seed = _derived_seed(seed, 0xF2E5)
        starts = sample_starts(prior, d, retry_seed)
        starts = _nudge_starts(starts, cone_centers, lengthscale, retry_seed)
        x, val = maximise(evaluate, prior, d, retry_seed, starts=starts)
        if not (np.all(np.isfinite(x)) and np.isfinite(val)):
            raise NumericalError("acquisition maximisation returned non-finite result")
    return x, val


def select_batch_lp(model, prior, n, cfg):
    """Select ``n`` points by local penalisation.

    The first point maximises the base acquisition; each later point
    maximises the soft minimum of the acquisition and cones at all previous
    selections.
    """
    if n < 1:
        raise ValueError("batch size must be at least 1")
    base = make_acquisition(model)
    lengthscale = model.g_model.params.lengthscale
    pa = PenalisedAcquisition(base, p=cfg.p)
    points = []
    for j in range(n):
        seed_j = _derived_seed(cfg.seed, 0x5E1E, j)
        if j == 0:
            evaluate = base
        else:
            evaluate = pa.evaluate
        centers = [c.center for c in pa.cones]
        x, _ = _maximise_acq(evaluate, prior, model.dim, seed_j, centers, lengthscale)
        points.append(x)
        if j < n - 1:
            pa = add_penaliser(pa, x, base, lengthscale, cfg.slope_fraction)
    return np.array(points)


def select_batch_kb(model, prior, n, cfg):
    """Select ``n`` points by Kriging Believer.

    Each selection is hallucinated into the g-space GP at its posterior mean
    before the next maximisation; the hallucinated observations are dropped
    once the batch is returned.
    """
    if n < 1:
        raise ValueError("batch size must be at least 1")
    current = model
    points = []
    for j in range(n):
        seed_j = _derived_seed(cfg.seed, 0x5E1E, j)
        evaluate = make_acquisition(current)
        lengthscale = current.g_model.params.lengthscale
        x, _ = _maximise_acq(evaluate, prior, model.dim, seed_j, [], lengthscale)
        points.append(x)
        if j < n - 1:
            believed, _ = current.g_model.posterior(x)
            current = WarpedModel(current.alpha, current.g_model.with_observation(x, believed))
    return np.array(points)


_SELECTORS = {}
for name in _KB_NAMES:
    _SELECTORS[name] = select_batch_kb
for name in _LP_NAMES:
    _SELECTORS[name] = select_batch_lp


def _checked_evaluate(integrand, points, trace):
    values = np.asarray(integrand(points), dtype=float).ravel()
    if values.size != points.shape[0]:
        raise IntegrandError("integrand returned wrong number of values", trace)
    if not np.all(np.isfinite(values)):
        raise IntegrandError("integrand returned a non-finite value", trace)
    if np.any(values < 0):
        raise IntegrandError("integrand returned a negative value", trace)
    return values


def run_batch_bq(integrand, prior, cfg):
    """Run the batch quadrature loop under a fixed evaluation budget.

    Seeds an initial design from the prior, then repeats: select a batch,
    evaluate the integrand at its points (one vectorised call), re-warp,
    refit and re-optimise hyperparameters, and record the integral estimate.
    Stops once cumulative evaluations reach the budget.
    """
    if cfg.budget < cfg.initial_design:
        raise ValueError("budget must cover the initial design")
    select = _SELECTORS[cfg.method]
    trace = QuadratureTrace()

    t0 = time.perf_counter()
    rng = np.random.default_rng(_derived_seed(cfg.seed, 0x1D0))
    inputs = prior.sample(cfg.initial_design, rng)
    values = _checked_evaluate(integrand, inputs, trace)

    params = None
    model = None

    def refit(batch_index):
        nonlocal params, model
        _, g = warp_targets(values, cfg.min_fraction)
        params = optimise_hyperparams(
            inputs,
            g,
            restarts=cfg.hyperopt_restarts,
            seed=_derived_seed(cfg.seed, 0x0157, batch_index),
            initial=params,
        )
        model = WarpedModel.fit(inputs, values, params, cfg.min_fraction)

    def record(batch_index, started):
        estimate = wsabi_integral_mean(model, prior)
        variance = wsabi_integral_variance(
            model,
            prior,
            n_samples=cfg.variance_samples,
            seed=_derived_seed(cfg.seed, 0x7A2, batch_index),
        )
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        trace.records.append(
            BatchRecord(batch_index, inputs.shape[0], estimate, variance, elapsed_ms)
        )

    refit(0)
    record(0, t0)

    batch_index = 0
    while inputs.shape[0] < cfg.budget:
        batch_index += 1
        started = time.perf_counter()
        batch_cfg = replace(cfg, seed=_derived_seed(cfg.seed, 0xBA7C, batch_index))
        batch = select(model, prior, cfg.batch_size, batch_cfg)
        batch_values = _checked_evaluate(integrand, batch, trace)
        inputs = np.vstack([inputs, batch])
        values = np.concatenate([values, batch_values])
        refit(batch_index)
        record(batch_index, started)
    return trace

"""Random-walk Metropolis-Hastings baseline and evidence estimators.

Chains are independent, seeded per chain index, and pooled in chain order,
so results are reproducible regardless of how the chains are scheduled. A
chain of ``samples_per_chain`` kept samples costs
``1 + burn_in + samples_per_chain`` target evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChainConfig:
    """Settings shared by all chains of one sampler run."""

    n_chains: int
    samples_per_chain: int
    burn_in: int = 500
    proposal_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.samples_per_chain < 1:
            raise ValueError("samples_per_chain must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if not self.proposal_sd > 0:
            raise ValueError("proposal_sd must be positive")


def mh_chain(log_target, init, cfg, chain_index=0):
    """One random-walk MH chain; returns the post-burn-in samples.

    Proposals are isotropic Gaussian with sd ``cfg.proposal_sd``; acceptance
    follows ``log u < log_target(x') - log_target(x)``, which handles
    infinite ratios without overflow. Deterministic given
    ``(cfg.seed, chain_index)``.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float))
    current = float(log_target(x))
    if not np.isfinite(current):
        raise ValueError("log_target must be finite at the initial point")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(int(cfg.seed) & 0xFFFFFFFF, int(chain_index)))
    )
    steps = cfg.burn_in + cfg.samples_per_chain
    increments = rng.standard_normal((steps, x.size)) * cfg.proposal_sd
    log_uniforms = np.log(rng.random(steps))
    kept = np.empty((cfg.samples_per_chain, x.size))
    for t in range(steps):
        proposal = x + increments[t]
        cand = float(log_target(proposal))
        if log_uniforms[t] < cand - current:
            x = proposal
            current = cand
        if t >= cfg.burn_in:
            kept[t - cfg.burn_in] = x
    return kept


def run_parallel_chains(log_target, cfg, inits):
    """Run ``cfg.n_chains`` independent chains, pooled in chain order."""
    inits = np.asarray(inits, dtype=float)
    if inits.ndim == 1:
        inits = inits[:, None]
    if inits.shape[0] != cfg.n_chains:
        raise ValueError("need exactly one initial point per chain")
    return [mh_chain(log_target, inits[i], cfg, chain_index=i) for i in range(cfg.n_chains)]


def estimate_evidence_prior_mc(likelihood, prior, n_samples, seed):
    """Plain Monte Carlo evidence: average likelihood over prior draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    theta = prior.sample(int(n_samples), rng)
    values = np.asarray(likelihood(theta), dtype=float).ravel()
    return float(np.mean(values))


def estimate_evidence_harmonic(chain_samples, likelihood):
    """Harmonic-mean evidence from posterior samples.

    High variance; provided for comparison only. Raises on any
    non-positive likelihood value.
    """
    samples = np.asarray(chain_samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] == 0:
        raise ValueError("need at least one posterior sample")
    values = np.asarray(likelihood(samples), dtype=float).ravel()
    if np.any(values <= 0):
        raise ValueError("harmonic-mean estimator requires positive likelihoods")
    return float(samples.shape[0] / np.sum(1.0 / values))

"""Batch Bayesian quadrature with a square-root-warped GP surrogate."""

from .batch import (
    BatchConfig,
    BatchRecord,
    IntegrandError,
    LipschitzCone,
    PenalisedAcquisition,
    QuadratureTrace,
    add_penaliser,
    estimate_local_lipschitz,
    run_batch_bq,
    select_batch_kb,
    select_batch_lp,
)
from .gp import (
    GaussianMeasure,
    GpModel,
    KernelParams,
    NumericalError,
    fit_gp,
    log_marginal_likelihood,
    optimise_hyperparams,
    posterior,
    posterior_mean_gradient,
    sample_gp_prior,
    se_kernel,
)
from .mcmc import (
    ChainConfig,
    estimate_evidence_harmonic,
    estimate_evidence_prior_mc,
    mh_chain,
    run_parallel_chains,
)
from .optim import concat_objective, maximise, sample_starts
from .quadrature import (
    IntegralEstimate,
    WarpedModel,
    acquisition,
    kernel_prior_double_mean,
    kernel_prior_mean,
    kernel_product_integral,
    vanilla_bq_moments,
    warp_targets,
    wsabi_integral_mean,
    wsabi_integral_variance,
)

__version__ = "0.1.0"

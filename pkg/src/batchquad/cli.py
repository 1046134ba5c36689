"""Command-line benchmark harness.

``batchquad <inmodel|mixture|evidence>`` reconstructs the chosen problem for
every run seed, certifies its ground truth, runs the requested methods and
batch sizes under a matched evaluation budget, and writes one CSV row per
recorded estimate. Output is written atomically (temp file + rename) and is
byte-identical across reruns except for the wallclock column.

For the sampling baselines the evaluation budget is the cost unit: ``mh``
runs one chain per batch-size slot and charges initial and burn-in
evaluations, and ``prior-mc`` averages the integrand over prior draws. How
posterior samples should be turned into an evidence number is genuinely
ambiguous; the default baseline is prior Monte Carlo, with the
harmonic-mean-from-chains estimator behind ``--method mh``.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .batch import BatchConfig, IntegrandError, run_batch_bq
from .gp import NumericalError
from .mcmc import ChainConfig, estimate_evidence_harmonic, mh_chain
from .problems import GENERATORS, verify_ground_truth

CSV_COLUMNS = [
    "experiment",
    "method",
    "batch_size",
    "run",
    "batch_index",
    "n_evaluations",
    "estimate",
    "estimate_variance",
    "ground_truth",
    "abs_error",
    "wallclock_ms",
]

DEFAULT_BUDGETS = {"inmodel": 103, "mixture": 203, "evidence": 103}
DEFAULT_BATCH_SIZES = (1, 2, 5, 10)
METHODS = ("kb", "lp", "mh", "prior-mc")
_METHOD_IDS = {name: i for i, name in enumerate(METHODS)}
INITIAL_DESIGN = 3
MAX_BURN_IN = 500


@dataclass
class ExperimentSpec:
    """One CLI invocation's worth of experiment cells."""

    kind: str
    batch_sizes: list
    methods: list
    budget: int
    runs: int
    seed: int
    output_path: str
    min_fraction: float = 0.8
    slope_fraction: float = 0.5
    p: int = -6
    grid_res: int = 501

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown experiment {self.kind!r}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.budget < 4:
            raise ValueError("budget must be at least 4")
        if any(n < 1 for n in self.batch_sizes):
            raise ValueError("batch sizes must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods: {bad}")


def _derived_seed(*tags):
    entropy = tuple(int(t) & 0xFFFFFFFF for t in tags)
    return int(np.random.SeedSequence(entropy=entropy).generate_state(1)[0])


def _effective_budget(budget, batch_size):
    # whole batches only, so the final evaluation count never overshoots
    usable = (budget - INITIAL_DESIGN) // batch_size
    return INITIAL_DESIGN + usable * batch_size


def _checkpoints(budget, batch_size):
    eff = _effective_budget(budget, batch_size)
    return list(range(INITIAL_DESIGN, eff + 1, batch_size))


def _metric(problem, value):
    return math.log(value) if problem.log_error else value


def _bq_rows(spec, problem, run, method, batch_size):
    cfg = BatchConfig(
        batch_size=batch_size,
        method=method,
        budget=_effective_budget(spec.budget, batch_size),
        min_fraction=spec.min_fraction,
        slope_fraction=spec.slope_fraction,
        p=spec.p,
        seed=_derived_seed(spec.seed, run, _METHOD_IDS[method], batch_size),
        initial_design=INITIAL_DESIGN,
    )
    trace = run_batch_bq(problem.integrand, problem.prior, cfg)
    rows = []
    for rec in trace.records:
        est = _metric(problem, rec.estimate)
        rows.append(
            (rec.batch_index, rec.n_evaluations, est, rec.variance, rec.wallclock_ms)
        )
    return rows


def _prior_mc_rows(spec, problem, run, batch_size):
    seed = _derived_seed(spec.seed, run, _METHOD_IDS["prior-mc"], batch_size)
    eff = _effective_budget(spec.budget, batch_size)
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    draws = problem.prior.sample(eff, rng)
    values = np.asarray(problem.integrand(draws), dtype=float).ravel()
    rows = []
    for index, n_evals in enumerate(_checkpoints(spec.budget, batch_size)):
        head = values[:n_evals]
        estimate = float(np.mean(head))
        variance = float(np.var(head, ddof=1) / n_evals) if n_evals > 1 else 0.0
        elapsed = (time.perf_counter() - started) * 1000.0
        rows.append((index, n_evals, _metric(problem, estimate), variance, elapsed))
        started = time.perf_counter()
    return rows


def _mh_log_target(problem):
    if problem.log_integrand is not None:
        log_like = problem.log_integrand
    else:

        def log_like(x):
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(problem.integrand(x), dtype=float))

    def log_target(x):
        return float(log_like(x[None, :])[0] + problem.prior.logpdf(x)[0])

    return log_like, log_target


def _mh_rows(spec, problem, run, batch_size):
    seed = _derived_seed(spec.seed, run, _METHOD_IDS["mh"], batch_size)
    eff = _effective_budget(spec.budget, batch_size)
    n_chains = batch_size
    per_chain = eff // n_chains
    if per_chain < 2:
        return []
    # at desk-scale budgets the paper-scale burn-in cannot fit; reserve at
    # least ~10 kept samples per chain and burn the rest, capped at 500
    burn_in = min(MAX_BURN_IN, max(0, per_chain - 10))
    kept_total = per_chain - 1 - burn_in
    if kept_total < 1:
        return []
    log_like, log_target = _mh_log_target(problem)
    cfg = ChainConfig(
        n_chains=n_chains,
        samples_per_chain=kept_total,
        burn_in=burn_in,
        proposal_sd=0.5,
        seed=seed,
    )
    started = time.perf_counter()
    rng = np.random.default_rng(_derived_seed(seed, 0x171))
    chains = []
    for i in range(n_chains):
        init = problem.prior.sample(1, rng)[0]
        for _ in range(10):
            if np.isfinite(log_target(init)):
                break
            init = problem.prior.sample(1, rng)[0]
        chains.append(mh_chain(log_target, init, cfg, chain_index=i))
    def likelihood(pts):
        return np.exp(np.asarray(log_like(pts), dtype=float))

    rows = []
    for index, n_evals in enumerate(_checkpoints(spec.budget, batch_size)):
        kept = n_evals // n_chains - 1 - burn_in
        if kept < 1:
            continue
        pooled = np.vstack([c[:kept] for c in chains])
        estimate = estimate_evidence_harmonic(pooled, likelihood)
        inv = 1.0 / likelihood(pooled)
        variance = (
            float(estimate**4 * np.var(inv, ddof=1) / inv.size) if inv.size > 1 else 0.0
        )
        elapsed = (time.perf_counter() - started) * 1000.0
        rows.append((index, n_evals, _metric(problem, estimate), variance, elapsed))
        started = time.perf_counter()
    return rows


def run_experiment(spec):
    """Execute every (run, method, batch size) cell and write the CSV.

    Returns the written rows (as dicts). Raises OSError for unwritable
    output before any computation starts.
    """
    out_dir = os.path.dirname(os.path.abspath(spec.output_path)) or "."
    tmp_path = os.path.join(out_dir, os.path.basename(spec.output_path) + ".tmp")
    handle = open(tmp_path, "w", newline="", encoding="utf-8")
    rows = []
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for run in range(spec.runs):
            problem_seed = _derived_seed(spec.seed, run, 0x9B0B)
            problem = GENERATORS[spec.kind](problem_seed, grid_res=spec.grid_res)
            verify_ground_truth(problem)
            truth = problem.truth.value
            for method in spec.methods:
                for batch_size in spec.batch_sizes:
                    if method in ("kb", "lp"):
                        cells = _bq_rows(spec, problem, run, method, batch_size)
                    elif method == "prior-mc":
                        cells = _prior_mc_rows(spec, problem, run, batch_size)
                    else:
                        cells = _mh_rows(spec, problem, run, batch_size)
                    for batch_index, n_evals, estimate, variance, ms in cells:
                        row = {
                            "experiment": spec.kind,
                            "method": method,
                            "batch_size": batch_size,
                            "run": run,
                            "batch_index": batch_index,
                            "n_evaluations": n_evals,
                            "estimate": estimate,
                            "estimate_variance": variance,
                            "ground_truth": truth,
                            "abs_error": abs(estimate - truth),
                            "wallclock_ms": ms,
                        }
                        rows.append(row)
                        writer.writerow(_format_row(row))
        handle.close()
        os.replace(tmp_path, spec.output_path)
    except BaseException:
        handle.close()
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return rows


def _format_row(row):
    out = []
    for col in CSV_COLUMNS:
        val = row[col]
        if col == "wallclock_ms":
            out.append(f"{val:.3f}")
        elif isinstance(val, float):
            out.append(repr(val))
        else:
            out.append(str(val))
    return out


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}") from exc


def _method_list(text):
    methods = [part.strip() for part in text.split(",") if part.strip()]
    for m in methods:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(
                f"unknown method {m!r}; choose from {', '.join(METHODS)}"
            )
    return methods


def build_parser():
    parser = argparse.ArgumentParser(
        prog="batchquad",
        description="Batch Bayesian quadrature benchmark experiments.",
    )
    parser.add_argument("experiment", choices=sorted(GENERATORS))
    parser.add_argument(
        "--batch-size",
        type=_int_list,
        default=list(DEFAULT_BATCH_SIZES),
        metavar="N[,N...]",
        help="batch sizes to run (default: 1,2,5,10)",
    )
    parser.add_argument(
        "--method",
        type=_method_list,
        default=["kb", "lp"],
        metavar="M[,M...]",
        help="methods: kb, lp, mh (harmonic mean from parallel chains), "
        "prior-mc (default evidence baseline; see module docs for why both "
        "sampling baselines are offered)",
    )
    parser.add_argument("--budget", type=int, default=None, help="total integrand evaluations")
    parser.add_argument("--runs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output CSV path")
    parser.add_argument("--min-fraction", type=float, default=0.8)
    parser.add_argument("--slope-fraction", type=float, default=0.5)
    parser.add_argument("--p", type=int, default=-6)
    parser.add_argument("--grid-res", type=int, default=501)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    budget = args.budget if args.budget is not None else DEFAULT_BUDGETS[args.experiment]
    try:
        spec = ExperimentSpec(
            kind=args.experiment,
            batch_sizes=args.batch_size,
            methods=args.method,
            budget=budget,
            runs=args.runs,
            seed=args.seed,
            output_path=args.out,
            min_fraction=args.min_fraction,
            slope_fraction=args.slope_fraction,
            p=args.p,
            grid_res=args.grid_res,
        )
    except ValueError as exc:
        print(f"batchquad: {exc}", file=sys.stderr)
        return 2
    try:
        run_experiment(spec)
    except (NumericalError, IntegrandError) as exc:
        print(f"batchquad: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"batchquad: I/O failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"batchquad: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Experiment driver: problem construction, runs, CSV logs and summaries.

Every random draw of a run comes from a Philox stream keyed by the user
seed and a fixed purpose index, so data, perturbation and starting point
can be replayed independently of each other and of the order in which
they are drawn.

CSV columns (one row per outer iteration)::

    iteration, functional_value, step_norm, projected_grad_norm,
    krylov_iterations, krylov_converged, radius, rho, accepted,
    sigma_1, ..., sigma_r

Floats are written with 17 significant digits. Wall-clock times are kept
out of the CSV so that it is a pure function of the configuration and the
seed; they go to the JSON summary instead.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .data import gen_exp_grid, load_sparse, planted_low_rank, random_sparse, sample_entries
from .linalg import KrylovConfig, truncated_svd
from .newton import NewtonConfig, SolveResult, solve
from .objectives import CompletionObjective, SparseApproxObjective
from .trustregion import InitStrategy, TrustRegionConfig, power_init, tr_solve
from .variety import FactoredMatrix

__all__ = [
    "ExperimentConfig",
    "Problem",
    "RunSummary",
    "rng_for",
    "build_problem",
    "initial_iterate",
    "perturbed_start",
    "default_krylov",
    "run_single",
    "run_experiment",
    "convergence_order",
    "quadratic_streak",
    "write_csv",
    "CSV_FIELDS",
]

PROBLEMS = ("approx", "complete", "exp-grid")
SOLVERS = ("newton", "trust-newton", "gauss-newton")

# purpose indices of the random streams
_DATA, _INIT = 0, 1


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch of runs: a problem family, a solver and a list of seeds.

    ``nnz`` is the number of nonzeros of the synthetic approximation target;
    ``fraction`` is the observed fraction for synthetic completion and the
    exp-grid problem; ``true_rank`` is the planted rank for synthetic data
    (defaults to ``r`` for completion; for approximation, setting it swaps
    the sparse target for a dense planted one). ``data_path`` replaces
    synthetic data by a ratings or Matrix Market file, truncated to its
    first ``take`` entries.
    """

    problem: str = "approx"
    n: int = 30
    m: int = 30
    r: int = 10
    init: InitStrategy = field(default_factory=InitStrategy)
    perturbation_alpha: float = 0.1
    solver: str = "newton"
    seeds: tuple = (0,)
    tol: float = 1e-24
    grad_tol: float = 1e-8
    max_iterations: int = 50
    output_path: str | None = None
    nnz: int = 300
    fraction: float = 0.5
    true_rank: int | None = None
    data_path: str | None = None
    take: int | None = None
    krylov: KrylovConfig | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if min(self.n, self.m) < 1 or self.r < 1:
            raise ValueError("n, m and r must be positive")
        if self.data_path is None and self.r > min(self.n, self.m):
            raise ValueError(f"rank {self.r} exceeds min(n, m) = {min(self.n, self.m)}")
        if self.problem == "exp-grid" and self.n != self.m:
            raise ValueError("the exp-grid problem is square")
        if not self.perturbation_alpha >= 0:
            raise ValueError("perturbation_alpha must be nonnegative")
        if self.tol <= 0 or self.grad_tol <= 0 or self.max_iterations < 1:
            raise ValueError("tolerances must be positive and max_iterations >= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if self.init.kind == "user-supplied":
            raise ValueError("user-supplied starts are passed to run_single directly")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")


class Problem(NamedTuple):
    objective: object
    # dense matrix the final iterate is compared with, or None
    reference: np.ndarray | None
    # dense matrix a perturbed start is built from, or None
    anchor: np.ndarray | None


class RunSummary(NamedTuple):
    seed: int
    solver: str
    status: str
    converged: bool
    iterations: int
    final_value: float
    final_error: float | None
    order_estimate: float
    sigma: list
    wall_time: float
    csv_path: str | None


def rng_for(seed, purpose):
    """Counter-based generator for one purpose of one seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(purpose,))
    return np.random.Generator(np.random.Philox(ss))


def _svd_reference(B, r):
    U, S, V = truncated_svd(B, r)
    return (U * S) @ V.T


def build_problem(cfg: ExperimentConfig, seed) -> Problem:
    """Objective, reference solution and perturbation anchor of one seed.

    * approx: ``1/2 ||X - B||^2`` with sparse ``B`` (or a dense planted
      ``G1 G2^T`` when ``true_rank`` is set); the reference is the truncated
      SVD of the densified ``B``.
    * complete: planted ``G1 G2^T`` observed at random entries (or the
      entries of a data file, which has no reference).
    * exp-grid: samples of ``exp(-x^2 - y^2)`` observed at random entries;
      the reference is the full rank-one grid matrix.
    """
    rng = rng_for(seed, _DATA)
    if cfg.problem == "approx":
        if cfg.data_path is not None:
            B = load_sparse(cfg.data_path, take=cfg.take)
        elif cfg.true_rank is not None:
            B = sp.csr_matrix(planted_low_rank(cfg.n, cfg.m, cfg.true_rank, rng))
        else:
            B = random_sparse(cfg.n, cfg.m, cfg.nnz, rng)
        if cfg.r > min(B.shape):
            raise ValueError(f"rank {cfg.r} exceeds min{B.shape}")
        ref = _svd_reference(B.toarray(), cfg.r) if B.shape[0] * B.shape[1] <= 4_000_000 else None
        return Problem(SparseApproxObjective(B), ref, ref)
    if cfg.problem == "complete" and cfg.data_path is not None:
        B = load_sparse(cfg.data_path, take=cfg.take)
        if cfg.r > min(B.shape):
            raise ValueError(f"rank {cfg.r} exceeds min{B.shape}")
        return Problem(CompletionObjective.from_sparse(B), None, None)
    if cfg.problem == "complete":
        M = planted_low_rank(cfg.n, cfg.m, cfg.true_rank or cfg.r, rng)
    else:
        M = gen_exp_grid(cfg.n)
    rows, cols, vals = sample_entries(M, cfg.fraction, rng)
    return Problem(CompletionObjective(rows, cols, vals, M.shape), M, M)


def perturbed_start(anchor, r, alpha, rng):
    """Truncated SVD of ``anchor + alpha * G`` with ``G`` standard Gaussian."""
    return FactoredMatrix(*truncated_svd(anchor + alpha * rng.standard_normal(anchor.shape), r))


def initial_iterate(cfg: ExperimentConfig, problem: Problem, seed):
    rng = rng_for(seed, _INIT)
    if cfg.init.kind == "power-method" or problem.anchor is None:
        return power_init(problem.objective, cfg.r, cfg.init.power_steps, rng)
    return perturbed_start(problem.anchor, cfg.r, cfg.perturbation_alpha, rng)


def default_krylov(n, m, r):
    """Krylov settings for the driver.

    The restart length covers the whole reduced system up to 500 unknowns
    so that small ill-conditioned problems (completion near a rank-deficient
    solution) get effectively exact inner solves; the absolute tolerance is
    small enough not to cut solves short when the right-hand side itself
    is tiny.
    """
    restart = min((n + m) * r, 500)
    return KrylovConfig(max_iterations=2 * restart, restart=restart, abs_tolerance=1e-24)


def _newton_config(cfg: ExperimentConfig, shape):
    krylov = cfg.krylov or default_krylov(*shape, cfg.r)
    hessian = "gauss-newton" if cfg.solver == "gauss-newton" else "full"
    return NewtonConfig(tol=cfg.tol, grad_tol=cfg.grad_tol, max_iterations=cfg.max_iterations,
                        krylov=krylov, hessian=hessian)


def convergence_order(step_norms, floor=1e-24, onset=1e-2):
    """Estimate of the convergence order from a sequence of step norms.

    Uses ``log(e_{k+1}) / log(e_k)`` over the final strictly decreasing run
    of the sequence, restricted to the asymptotic regime ``e_k <= onset``
    and to values above the rounding ``floor``; the median over those pairs
    is returned (``nan`` when there is none). Because the ratio is not
    scale-invariant the values are best taken small: a quadratic sequence
    ``e_{k+1} = C e_k^2`` gives ``2 + log C / log e_k``, a linear one gives
    ``1 + log q / log e_k``.
    """
    e = [float(v) for v in step_norms if np.isfinite(v)]
    # final strictly decreasing run
    start = len(e) - 1
    while start > 0 and e[start] < e[start - 1]:
        start -= 1
    run = e[start:]
    ratios = [
        math.log(b) / math.log(a)
        for a, b in zip(run, run[1:])
        if 0 < a <= onset and a < 1 and b > floor
    ]
    return float(np.median(ratios)) if ratios else float("nan")


def quadratic_streak(step_norms, c=10.0, floor=1e-12):
    """Length of the run of pairs ``e_{k+1} <= max(c e_k^2, floor)`` ending at the first ``e < floor``.

    Returns 0 if the sequence never reaches the floor.
    """
    e = list(step_norms)
    hit = next((k for k, v in enumerate(e) if v < floor), None)
    if hit is None or hit == 0:
        return 0
    streak = 0
    for k in range(hit - 1, -1, -1):
        if e[k + 1] <= max(c * e[k] ** 2, floor):
            streak += 1
        else:
            break
    return streak


CSV_FIELDS = [
    "iteration", "functional_value", "step_norm", "projected_grad_norm",
    "krylov_iterations", "krylov_converged", "radius", "rho", "accepted",
]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path, history, r):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS + [f"sigma_{i + 1}" for i in range(r)])
        for rec in history:
            row = [getattr(rec, f) for f in CSV_FIELDS] + list(rec.sigma_spectrum)
            w.writerow([_fmt(v) for v in row])


def _accepted_steps(history):
    return [h.step_norm for h in history if h.accepted]


def run_single(cfg: ExperimentConfig, seed, x0: FactoredMatrix | None = None, problem: Problem | None = None):
    """Run one seed; returns ``(SolveResult, RunSummary)``.

    A solver failure is recorded in the summary status rather than raised.
    """
    problem = problem or build_problem(cfg, seed)
    obj = problem.objective
    if x0 is None:
        x0 = initial_iterate(cfg, problem, seed)
    ncfg = _newton_config(cfg, obj.shape)
    try:
        if cfg.solver == "trust-newton":
            res = tr_solve(x0, obj, ncfg, TrustRegionConfig(max_outer=cfg.max_iterations))
        else:
            res = solve(x0, obj, ncfg)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        res = SolveResult(x0, [], f"failed: {exc}")
    x = res.x
    final_value = float(obj.value(x))
    final_error = None
    if problem.reference is not None:
        ref = problem.reference
        final_error = float(np.linalg.norm(x.to_dense() - ref) / max(np.linalg.norm(ref), 1e-300))
    csv_path = None
    if cfg.output_path is not None:
        csv_path = str(Path(cfg.output_path) / f"{cfg.problem}_{cfg.solver}_seed{seed}.csv")
        write_csv(csv_path, res.history, cfg.r)
    wall = res.history[-1].wall_time if res.history else 0.0
    summary = RunSummary(
        seed=seed,
        solver=cfg.solver,
        status=res.status,
        converged=res.status == "converged",
        iterations=len(res.history),
        final_value=final_value,
        final_error=final_error,
        order_estimate=convergence_order(_accepted_steps(res.history)),
        sigma=[float(s) for s in x.S],
        wall_time=float(wall),
        csv_path=csv_path,
    )
    if cfg.output_path is not None:
        _write_json(Path(cfg.output_path) / f"{cfg.problem}_{cfg.solver}_seed{seed}.json", cfg, summary)
    return res, summary


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _write_json(path, cfg, summary: RunSummary):
    payload = {
        "config": {k: v for k, v in asdict(cfg).items() if k != "seeds"},
        **{k: _jsonable(v) for k, v in summary._asdict().items()},
    }
    payload["config"]["krylov"] = asdict(cfg.krylov) if cfg.krylov else None
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def run_experiment(cfg: ExperimentConfig, report=None):
    """Run every seed of ``cfg``.

    Parameters
    ----------
    report : callable, optional
        Called with each :class:`RunSummary` as soon as it is available.

    Returns
    -------
    list of RunSummary
    """
    out = []
    for seed in cfg.seeds:
        _, summary = run_single(cfg, seed)
        if report is not None:
            report(summary)
        out.append(summary)
    return out


def with_seeds(cfg: ExperimentConfig, first, count):
    return replace(cfg, seeds=tuple(range(first, first + count)))

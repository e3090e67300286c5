"""Command-line harness.

Subcommands::

    desing approx    sparse (or planted) low-rank approximation
    desing complete  matrix completion, synthetic or from a ratings/.mtx file
    desing expgrid   completion of the rank-one exp(-x^2-y^2) grid matrix
    desing verify    variety and Newton invariant suites
    desing bench     time per Newton iteration against problem size

Runs print one summary line each; with ``--out DIR`` every run also writes
``<problem>_<solver>_seed<k>.csv`` and a matching ``.json`` summary.
Exit status: 0 when every run converged (or every check passed), 1
otherwise, 2 on invalid arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .experiment import ExperimentConfig, RunSummary, build_problem, initial_iterate, run_experiment
from .linalg import KrylovConfig
from .newton import NewtonConfig, solve
from .trustregion import InitStrategy
from .verify import run_all

__all__ = ["main", "build_parser"]


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _add_run_args(p, *, n, rank, solver, init, alpha=0.1):
    p.add_argument("--n", type=_positive_int, default=n, help="rows (grid size for expgrid)")
    p.add_argument("--m", type=_positive_int, default=None, help="columns (defaults to --n)")
    p.add_argument("--rank", type=_positive_int, default=rank)
    p.add_argument("--alpha", type=float, default=alpha, help="perturbation size of the start")
    p.add_argument("--solver", choices=["newton", "trust-newton", "gauss-newton"], default=solver)
    p.add_argument("--init", choices=["perturbed-svd", "power-method"], default=init)
    p.add_argument("--power-steps", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--trials", type=_positive_int, default=20, help="number of consecutive seeds")
    p.add_argument("--tol", type=float, default=1e-24, help="squared step-norm tolerance")
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=_positive_int, default=None)
    p.add_argument("--out", type=Path, default=None, help="directory for CSV and JSON output")


def build_parser():
    parser = argparse.ArgumentParser(prog="desing", description="Desingularized Newton methods for low-rank problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approx", help="approximate a sparse matrix by rank r")
    _add_run_args(p, n=30, rank=10, solver="newton", init="perturbed-svd")
    p.add_argument("--nnz", type=int, default=300, help="nonzeros of the synthetic target")
    p.add_argument("--true-rank", type=_positive_int, default=None,
                   help="use a dense planted target of this rank instead")
    p.add_argument("--data", type=Path, default=None, help="ratings file or .mtx target")
    p.add_argument("--take", type=_positive_int, default=None, help="keep the first k entries of --data")

    p = sub.add_parser("complete", help="rank-r matrix completion")
    _add_run_args(p, n=30, rank=5, solver="trust-newton", init="perturbed-svd")
    p.add_argument("--fraction", type=float, default=0.5, help="observed fraction (synthetic data)")
    p.add_argument("--true-rank", type=_positive_int, default=None)
    p.add_argument("--data", type=Path, default=None, help="ratings file or .mtx observations")
    p.add_argument("--take", type=_positive_int, default=None, help="keep the first k entries of --data")

    p = sub.add_parser("expgrid", help="complete the rank-one exp(-x^2-y^2) grid matrix")
    _add_run_args(p, n=40, rank=5, solver="trust-newton", init="power-method")
    p.add_argument("--fraction", type=float, default=0.5)

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="time Newton iterations on the approximation problem")
    p.add_argument("--sizes", type=_positive_int, nargs="+", default=[512, 1024])
    p.add_argument("--rank", type=_positive_int, default=10)
    p.add_argument("--nnz", type=_positive_int, default=20000)
    p.add_argument("--iters", type=_positive_int, default=3, help="Newton iterations timed per size")
    p.add_argument("--krylov-iters", type=_positive_int, default=20, help="GMRES iterations per Newton step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="JSON file for the timings")
    return parser


def _config(args):
    problem = {"approx": "approx", "complete": "complete", "expgrid": "exp-grid"}[args.command]
    m = args.m if args.m is not None else args.n
    max_iters = args.max_iters
    if max_iters is None:
        max_iters = 50 if args.solver == "newton" else 200
    return ExperimentConfig(
        problem=problem,
        n=args.n,
        m=m,
        r=args.rank,
        init=InitStrategy(args.init, args.power_steps),
        perturbation_alpha=args.alpha,
        solver=args.solver,
        seeds=tuple(range(args.seed, args.seed + args.trials)),
        tol=args.tol,
        grad_tol=args.grad_tol,
        max_iterations=max_iters,
        output_path=str(args.out) if args.out is not None else None,
        nnz=getattr(args, "nnz", 300),
        fraction=getattr(args, "fraction", 0.5),
        true_rank=getattr(args, "true_rank", None),
        data_path=str(args.data) if getattr(args, "data", None) is not None else None,
        take=getattr(args, "take", None),
    )


def _fmt_summary(s: RunSummary):
    err = "n/a" if s.final_error is None else f"{s.final_error:.3e}"
    sigma2 = f"{s.sigma[1]:.3e}" if len(s.sigma) > 1 else "n/a"
    return (f"seed={s.seed} solver={s.solver} status={s.status} iters={s.iterations} "
            f"F={s.final_value:.3e} rel_err={err} order={s.order_estimate:.2f} sigma_2={sigma2} "
            f"time={s.wall_time:.2f}s")


def _run(args):
    cfg = _config(args)
    summaries = run_experiment(cfg, report=lambda s: print(_fmt_summary(s), flush=True))
    ok = sum(s.converged for s in summaries)
    print(f"converged {ok}/{len(summaries)}")
    return 0 if ok == len(summaries) else 1


def _verify(args):
    failed = 0
    for suite, checks in run_all(args.seed):
        for c in checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {suite}: {c.name} (worst {c.worst:.2e}, limit {c.threshold:.0e})")
            failed += not c.passed
    return 0 if failed == 0 else 1


def bench_iteration_time(n, r, nnz, iters, seed, krylov_iters=20):
    """Mean wall time of one Newton iteration on an ``n x n`` approximation problem.

    The start is the usual perturbed truncated SVD, and every inner solve
    runs exactly ``krylov_iters`` GMRES iterations (no forcing, no early
    exit) so that the timing reflects the cost of one iteration rather
    than how well conditioned a particular random instance happens to be.
    """
    cfg = ExperimentConfig(problem="approx", n=n, m=n, r=r, nnz=nnz, seeds=(seed,))
    problem = build_problem(cfg, seed)
    x0 = initial_iterate(cfg, problem, seed)
    krylov = KrylovConfig(max_iterations=krylov_iters, restart=krylov_iters,
                          rel_tolerance=1e-300, abs_tolerance=1e-300)
    ncfg = NewtonConfig(tol=1e-300, grad_tol=1e-300, max_iterations=iters, krylov=krylov, forcing=False)
    t0 = time.perf_counter()
    res = solve(x0, problem.objective, ncfg)
    elapsed = time.perf_counter() - t0
    return elapsed / max(len(res.history), 1), len(res.history)


def _bench(args):
    rows = []
    for n in args.sizes:
        per_iter, k = bench_iteration_time(n, args.rank, args.nnz, args.iters, args.seed, args.krylov_iters)
        rows.append({"n": n, "m": n, "r": args.rank, "nnz": args.nnz, "iterations": k, "seconds_per_iteration": per_iter})
        print(f"n=m={n} r={args.rank} nnz={args.nnz}: {per_iter * 1e3:.2f} ms/iteration over {k} iterations")
    for a, b in zip(rows, rows[1:]):
        print(f"ratio {b['n']}/{a['n']}: {b['seconds_per_iteration'] / a['seconds_per_iteration']:.2f}")
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=2))
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return _verify(args)
        if args.command == "bench":
            return _bench(args)
        return _run(args)
    except (ValueError, OSError) as exc:
        print(f"desing: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

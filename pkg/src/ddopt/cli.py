"""Command-line harness: generate / train / reference / experiment / report."""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .cache import load_cache, save_cache
from .data import assemble, generate_synthetic
from .harness import (CSV_COLUMNS, _history_rows, _run_one, reference_solve,
                      run_experiment)
from .model import ProblemSpec


def _cmd_generate(args):
    blocks, grid = generate_synthetic(args.p, args.q, args.rows, args.cols,
                                      density=args.density, seed=args.seed)
    save_cache(args.out, blocks, grid, density=args.density, seed=args.seed)
    nnz = sum(b.matrix.nnz if b.is_sparse else int(np.count_nonzero(b.matrix))
              for b in blocks)
    print(f"wrote {args.out}: {grid.n} x {grid.m}, P={grid.P}, Q={grid.Q}, "
          f"nnz={nnz}")
    return 0


def _cmd_reference(args):
    blocks, grid, _ = load_cache(args.data)
    dataset = assemble(blocks, grid)
    spec = ProblemSpec(n=grid.n, m=grid.m, lam=args.lam, loss=args.loss)
    f_star = reference_solve(dataset, spec, gap_tol=args.gap_tol,
                             max_epochs=args.max_epochs)
    print(repr(f_star))
    return 0


def _cmd_train(args):
    blocks, grid, _ = load_cache(args.data)
    from .data import partition_dataset
    if (args.p, args.q) != (grid.P, grid.Q):
        dataset = assemble(blocks, grid)
        blocks, grid = partition_dataset(dataset, args.p, args.q)
    spec = ProblemSpec(n=grid.n, m=grid.m, lam=args.lam, loss=args.loss)
    f_star = None
    if args.fstar is not None:
        if args.fstar == "auto":
            f_star = reference_solve(assemble(blocks, grid), spec,
                                     gap_tol=args.gap_tol)
        else:
            f_star = float(args.fstar)
    batch = args.batch if args.batch is not None else max(1, grid.n // grid.P)
    kw = dict(iters=args.iters, seed=args.seed, f_star=f_star, batch=batch,
              local_passes=args.local_passes, use_beta=args.beta_stepsize,
              scale_gamma_with_p=args.scale_gamma_with_p,
              gradient_lag=args.gradient_lag, threads=args.threads)
    if args.gamma_grid:
        from .harness import _best_gamma_run
        grid_vals = [float(v) for v in args.gamma_grid.split(",")]
        hist, times, gamma = _best_gamma_run(args.solver, blocks, grid, spec,
                                             grid_vals, **kw)
    else:
        hist, times = _run_one(args.solver, blocks, grid, spec,
                               gamma=args.gamma, **kw)
    if args.out:
        rows = _history_rows(args.solver, grid, args.lam, f_star, hist, times)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    final = hist.final
    msg = (f"{args.solver}: {len(hist)} iterations, F = {final.primal_value:.9g}, "
           f"reduce_ops = {final.reduce_ops}, "
           f"scalars = {final.elements_communicated}")
    if final.rel_opt is not None:
        msg += f", rel_opt = {final.rel_opt:.3e}"
    print(msg)
    return 0


def _cmd_experiment(args):
    written = run_experiment(args.config, out_dir=args.out_dir)
    for section, path in written.items():
        print(f"{section}: {path}")
    return 0


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _summarize(rows, origin):
    groups = {}
    for row in rows:
        key = (row["solver"], row.get("lambda", ""))
        groups.setdefault(key, []).append(row)
    out = []
    for (solver, lam), grp in sorted(groups.items()):
        last = grp[-1]
        out.append((origin, solver, lam, last.get("iter", len(grp)),
                    last.get("rel_opt", ""), last.get("reduce_ops", ""),
                    last.get("scalars_communicated", "")))
    return out


def _cmd_report(args):
    lines = _summarize(_read_rows(args.csv), "run")
    if args.baseline:
        lines += _summarize(_read_rows(args.baseline), "baseline")
    header = ("origin", "solver", "lambda", "final_iter", "final_rel_opt",
              "reduce_ops", "scalars")
    widths = [max(len(str(row[i])) for row in [header] + lines)
              for i in range(len(header))]
    for row in [header] + lines:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ddopt",
                                     description="Doubly-distributed solvers "
                                                 "for regularized linear models")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic dataset cache")
    gen.add_argument("--out", required=True)
    gen.add_argument("--p", type=int, required=True)
    gen.add_argument("--q", type=int, required=True)
    gen.add_argument("--rows", type=int, required=True, help="rows per block")
    gen.add_argument("--cols", type=int, required=True, help="columns per block")
    gen.add_argument("--density", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=_cmd_generate)

    ref = sub.add_parser("reference", help="compute the reference objective f*")
    ref.add_argument("--data", required=True)
    ref.add_argument("--lambda", dest="lam", type=float, required=True)
    ref.add_argument("--loss", choices=["hinge", "logistic"], default="hinge")
    ref.add_argument("--gap-tol", type=float, default=1e-8)
    ref.add_argument("--max-epochs", type=int, default=4000)
    ref.set_defaults(func=_cmd_reference)

    train = sub.add_parser("train", help="run one solver on a cached dataset")
    train.add_argument("--data", required=True)
    train.add_argument("--solver", choices=["d3ca", "radisa", "radisa-avg"],
                       default="d3ca")
    train.add_argument("--p", type=int, required=True)
    train.add_argument("--q", type=int, required=True)
    train.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    train.add_argument("--loss", choices=["hinge", "logistic"], default="hinge")
    train.add_argument("--iters", type=int, default=20)
    train.add_argument("--batch", type=int, default=None,
                       help="inner steps per block per iteration (radisa)")
    train.add_argument("--gamma", type=float, default=1.0)
    train.add_argument("--gamma-grid", default=None,
                       help="comma-separated gammas; best final rel_opt wins")
    train.add_argument("--local-passes", type=int, default=1)
    train.add_argument("--beta-stepsize", action="store_true")
    train.add_argument("--gradient-lag", type=int, default=1)
    train.add_argument("--scale-gamma-with-p", action="store_true")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--threads", type=int, default=None)
    train.add_argument("--fstar", default=None,
                       help='"auto" to run the reference solver, or a value')
    train.add_argument("--gap-tol", type=float, default=1e-8)
    train.add_argument("--out", default=None, help="write per-iteration CSV here")
    train.set_defaults(func=_cmd_train)

    exp = sub.add_parser("experiment", help="run config-driven experiment sweeps")
    exp.add_argument("--config", required=True)
    exp.add_argument("--out-dir", default=None)
    exp.set_defaults(func=_cmd_experiment)

    rep = sub.add_parser("report", help="summarize an experiment CSV")
    rep.add_argument("--csv", required=True)
    rep.add_argument("--baseline", default=None,
                     help="externally produced CSV to list alongside")
    rep.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

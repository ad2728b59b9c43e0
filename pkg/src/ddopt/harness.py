"""Reference solver, convergence metrics, and experiment drivers.

The reference solver produces f* with a duality-gap certificate; the drivers
rerun the convergence / strong-scaling / weak-scaling protocols at
configurable scale and write CSV reports.  Wall-clock columns are recorded
for reporting only — iteration counts and communication counters are the
reproducible quantities.
"""
from __future__ import annotations

import csv
import time
import warnings
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .d3ca import D3caConfig, local_sdca, run_d3ca
from .data import assemble, generate_synthetic, partition_dataset
from .engine import rng_stream
from .losses import dual_objective, primal_objective
from .model import DataBlock, DualVector, PrimalVector, ProblemSpec
from .partition import make_grid
from .radisa import RadisaConfig, run_radisa

CSV_COLUMNS = ["solver", "P", "Q", "lambda", "iter", "primal", "f_star",
               "rel_opt", "reduce_ops", "scalars_communicated", "wall_seconds"]
WEAK_COLUMNS = ["solver", "P", "Q", "sparsity", "lambda", "iters",
                "wall_seconds", "efficiency_pct"]

SOLVER_NAMES = ("d3ca", "radisa", "radisa-avg")


class HarnessError(Exception):
    pass


class NonPositiveReference(HarnessError):
    pass


class NonPositiveTime(HarnessError):
    pass


class ConfigError(HarnessError):
    pass


class MaxIterationsExceeded(HarnessError):
    def __init__(self, gap, f_value, epochs):
        super().__init__(f"no certificate after {epochs} epochs: "
                         f"gap={gap:.3e} at F={f_value:.12g}")
        self.gap = gap
        self.f_value = f_value
        self.epochs = epochs


def reference_solve(dataset, spec, gap_tol=1e-8, max_epochs=4000, seed=0):
    """Serial single-block dual coordinate ascent until the duality gap
    certifies (relative) optimality: gap <= gap_tol * max(1, |F|).

    Returns F(w) at the certified point — the f* oracle behind every
    relative-optimality figure.  Raises MaxIterationsExceeded (reporting the
    achieved gap) if the certificate is not reached.
    """
    if not gap_tol > 0:
        raise ValueError("gap_tol must be positive")
    block = DataBlock(p=0, q=0, matrix=dataset.X, labels=dataset.y)
    grid = make_grid(dataset.n, dataset.m, 1, 1)
    cells = {(0, 0): block}
    n = dataset.n
    lam_n = spec.lam * n
    alpha = np.zeros(n)
    w = np.zeros(dataset.m)
    f_val = gap = None
    for epoch in range(1, max_epochs + 1):
        rng = rng_stream(seed, "reference", epoch)
        delta = local_sdca(alpha, w, block, spec, H=1, t=epoch, rng=rng)
        alpha = alpha + delta
        w = np.asarray(block.matrix.T @ alpha).ravel() / lam_n
        f_val = primal_objective(PrimalVector([w]), cells, grid, spec)
        d_val = dual_objective(DualVector([alpha]), cells, grid, spec)
        gap = f_val - d_val
        if gap <= gap_tol * max(1.0, abs(f_val)):
            return f_val
    raise MaxIterationsExceeded(gap, f_val, max_epochs)


def relative_optimality(f_t, f_star):
    """(f_t - f_star) / f_star.  Negative results are allowed but flagged:
    they mean the reference itself had not converged."""
    if not f_star > 0:
        raise NonPositiveReference(f"reference objective must be positive, got {f_star}")
    rel = (f_t - f_star) / f_star
    if rel < 0:
        warnings.warn(f"relative optimality {rel:.3e} is negative: "
                      "the reference value looks unconverged", stacklevel=2)
    return rel


def weak_scaling_efficiency(t_1, t_p):
    """(t_1 / t_p) * 100; super-linear values are reported as-is."""
    if not (t_1 > 0 and t_p > 0):
        raise NonPositiveTime(f"times must be positive, got {t_1} and {t_p}")
    return (t_1 / t_p) * 100.0


def _run_one(name, blocks, grid, spec, *, iters, seed, f_star, batch=None,
             gamma=1.0, local_passes=1, use_beta=False, scale_gamma_with_p=False,
             gradient_lag=1, averaging="pq", threads=None, target=None):
    """One solver run with per-iteration wall times; returns (history, times)."""
    times = []
    start = time.perf_counter()

    def tick(t, *_solution):
        times.append(time.perf_counter() - start)

    if name == "d3ca":
        cfg = D3caConfig(outer_iters=iters, local_iters=local_passes,
                         use_beta_stepsize=use_beta, seed=seed, averaging=averaging)
        _, _, hist = run_d3ca(blocks, grid, spec, cfg, threads=threads,
                              f_star=f_star, on_iteration=tick,
                              target_rel_opt=target)
    elif name in ("radisa", "radisa-avg"):
        if batch is None:
            raise ConfigError("radisa needs a batch size")
        cfg = RadisaConfig(batch_size=batch, gamma=gamma, outer_iters=iters,
                           variant="avg" if name == "radisa-avg" else "disjoint",
                           seed=seed, gradient_lag=gradient_lag,
                           scale_gamma_with_p=scale_gamma_with_p)
        _, hist = run_radisa(blocks, grid, spec, cfg, threads=threads,
                             f_star=f_star, on_iteration=tick,
                             target_rel_opt=target)
    else:
        raise ConfigError(f"unknown solver {name!r}")
    return hist, times


def _best_gamma_run(name, blocks, grid, spec, gamma_grid, **kw):
    """Run once per gamma, keep the run with the best final rel_opt (final
    primal value when no reference is available — the orderings agree)."""
    best = None
    for gamma in gamma_grid:
        hist, times = _run_one(name, blocks, grid, spec, gamma=gamma, **kw)
        final = hist.final
        key = final.primal_value if final.rel_opt is None else final.rel_opt
        if best is None or key < best[0]:
            best = (key, gamma, hist, times)
    metric = "F" if kw.get("f_star") is None else "rel_opt"
    print(f"[gamma-grid] {name}: best gamma = {best[1]} "
          f"(final {metric} = {best[0]:.3e})")
    return best[2], best[3], best[1]


def _history_rows(name, grid, lam, f_star, hist, times):
    rows = []
    for rec, wall in zip(hist, times):
        rows.append({"solver": name, "P": grid.P, "Q": grid.Q, "lambda": repr(lam),
                     "iter": rec.t, "primal": repr(rec.primal_value),
                     "f_star": "" if f_star is None else repr(f_star),
                     "rel_opt": "" if rec.rel_opt is None else repr(rec.rel_opt),
                     "reduce_ops": rec.reduce_ops,
                     "scalars_communicated": rec.elements_communicated,
                     "wall_seconds": f"{wall:.6f}"})
    return rows


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return Path(path)


def _need(section, cfg, key):
    if key not in cfg:
        raise ConfigError(f"[{section}] is missing required key {key!r}")
    return cfg[key]


def _solver_list(cfg, default=SOLVER_NAMES):
    solvers = list(cfg.get("solvers", default))
    for s in solvers:
        if s not in SOLVER_NAMES:
            raise ConfigError(f"unknown solver {s!r}")
    return solvers


def _convergence(cfg, out_dir):
    P = int(_need("convergence", cfg, "p"))
    Q = int(_need("convergence", cfg, "q"))
    rpb = int(_need("convergence", cfg, "rows_per_block"))
    cpb = int(_need("convergence", cfg, "cols_per_block"))
    if P < 1 or Q < 1:
        raise ConfigError(f"need P >= 1 and Q >= 1, got P={P}, Q={Q}")
    iters = int(cfg.get("iters", 50))
    seed = int(cfg.get("seed", 0))
    density = float(cfg.get("density", 1.0))
    lambdas = [float(v) for v in cfg.get("lambdas", (1e-1, 1e-2, 1e-3))]
    solvers = _solver_list(cfg)
    batch = int(cfg.get("batch", rpb))
    local_passes = int(cfg.get("local_passes", 1))
    gap_tol = float(cfg.get("gap_tol", 1e-8))
    gamma_grid = [float(g) for g in cfg.get("gamma_grid", ())]
    gamma = float(cfg.get("gamma", 1.0))
    max_epochs = int(cfg.get("reference_max_epochs", 4000))

    blocks, grid = generate_synthetic(P, Q, rpb, cpb, density=density, seed=seed)
    dataset = assemble(blocks, grid)
    rows = []
    for lam in lambdas:
        spec = ProblemSpec(n=grid.n, m=grid.m, lam=lam, loss="hinge")
        f_star = reference_solve(dataset, spec, gap_tol=gap_tol, max_epochs=max_epochs)
        for name in solvers:
            kw = dict(iters=iters, seed=seed, f_star=f_star, batch=batch,
                      local_passes=local_passes)
            if gamma_grid and name != "d3ca":
                hist, times, _ = _best_gamma_run(name, blocks, grid, spec,
                                                 gamma_grid, **kw)
            else:
                hist, times = _run_one(name, blocks, grid, spec, gamma=gamma, **kw)
            rows.extend(_history_rows(name, grid, lam, f_star, hist, times))
    return _write_csv(Path(out_dir) / "convergence.csv", CSV_COLUMNS, rows)


def _strong_scaling(cfg, out_dir):
    n = int(_need("strong_scaling", cfg, "n"))
    m = int(_need("strong_scaling", cfg, "m"))
    cells = [(int(c[0]), int(c[1])) for c in _need("strong_scaling", cfg, "cells")]
    for P, Q in cells:
        if P * Q < 1:
            raise ConfigError(f"cell ({P},{Q}) has no workers")
    seed = int(cfg.get("seed", 0))
    density = float(cfg.get("density", 1.0))
    solvers = _solver_list(cfg, default=("d3ca", "radisa"))
    lam_by = {"d3ca": float(cfg.get("lambda_d3ca", 1e-2)),
              "radisa": float(cfg.get("lambda_radisa", 1e-3)),
              "radisa-avg": float(cfg.get("lambda_radisa", 1e-3))}
    target = float(cfg.get("target", 0.01))
    max_iters = int(cfg.get("max_iters", 100))
    total_batch = int(cfg.get("total_batch", 2 * n))
    gamma = float(cfg.get("gamma", 1.0))
    scale_gamma = bool(cfg.get("scale_gamma_with_p", True))
    local_passes = int(cfg.get("local_passes", 1))
    gap_tol = float(cfg.get("gap_tol", 1e-6))
    max_epochs = int(cfg.get("reference_max_epochs", 4000))

    blocks0, grid0 = generate_synthetic(1, 1, n, m, density=density, seed=seed)
    dataset = assemble(blocks0, grid0)
    f_star_by_lam = {}
    rows = []
    for P, Q in cells:
        blocks, grid = partition_dataset(dataset, P, Q)
        for name in solvers:
            lam = lam_by[name]
            spec = ProblemSpec(n=n, m=m, lam=lam, loss="hinge")
            if lam not in f_star_by_lam:
                f_star_by_lam[lam] = reference_solve(dataset, spec, gap_tol=gap_tol,
                                                     max_epochs=max_epochs)
            if total_batch % (P * Q) != 0:
                raise ConfigError(f"total_batch={total_batch} is not divisible by "
                                  f"P*Q={P * Q}")
            batch = total_batch // (P * Q)   # total inner samples stay constant
            hist, times = _run_one(name, blocks, grid, spec, iters=max_iters,
                                   seed=seed, f_star=f_star_by_lam[lam], batch=batch,
                                   gamma=gamma, scale_gamma_with_p=scale_gamma,
                                   local_passes=local_passes, target=target)
            rows.extend(_history_rows(name, grid, lam, f_star_by_lam[lam], hist, times))
    return _write_csv(Path(out_dir) / "strong_scaling.csv", CSV_COLUMNS, rows)


def _weak_scaling(cfg, out_dir, timings=None):
    p_values = [int(v) for v in _need("weak_scaling", cfg, "p_values")]
    Q = int(cfg.get("q", 1))
    rpb = int(_need("weak_scaling", cfg, "rows_per_block"))
    cpb = int(_need("weak_scaling", cfg, "cols_per_block"))
    if Q < 1 or any(p < 1 for p in p_values):
        raise ConfigError("partition counts must be >= 1")
    sparsities = [float(r) for r in cfg.get("sparsities", (0.01, 0.05))]
    solvers = _solver_list(cfg, default=("d3ca", "radisa"))
    lam_by = {"d3ca": float(cfg.get("lambda_d3ca", 1.0)),
              "radisa": float(cfg.get("lambda_radisa", 0.1)),
              "radisa-avg": float(cfg.get("lambda_radisa", 0.1))}
    target = float(cfg.get("target", 0.05))
    max_iters = int(cfg.get("max_iters", 100))
    seed = int(cfg.get("seed", 0))
    gamma = float(cfg.get("gamma", 1.0))
    local_passes = int(cfg.get("local_passes", 1))
    batch = cfg.get("batch", rpb)
    gap_tol = float(cfg.get("gap_tol", 1e-6))
    max_epochs = int(cfg.get("reference_max_epochs", 4000))

    measured = {}   # (solver, sparsity, P) -> (iters, wall_seconds)
    for r in sparsities:
        for P in p_values:
            blocks, grid = generate_synthetic(P, Q, rpb, cpb, density=r, seed=seed)
            dataset = assemble(blocks, grid)
            for name in solvers:
                spec = ProblemSpec(n=grid.n, m=grid.m, lam=lam_by[name], loss="hinge")
                f_star = reference_solve(dataset, spec, gap_tol=gap_tol,
                                         max_epochs=max_epochs)
                hist, times = _run_one(name, blocks, grid, spec, iters=max_iters,
                                       seed=seed, f_star=f_star, batch=int(batch),
                                       gamma=gamma, local_passes=local_passes,
                                       target=target)
                wall = times[-1]
                if timings is not None:
                    wall = float(timings[(name, r, P)])
                measured[(name, r, P)] = (len(hist), wall)
    rows = []
    base_p = p_values[0]
    for r in sparsities:
        for P in p_values:
            for name in solvers:
                iters, wall = measured[(name, r, P)]
                t_1 = measured[(name, r, base_p)][1]
                eff = weak_scaling_efficiency(t_1, wall)
                rows.append({"solver": name, "P": P, "Q": Q, "sparsity": repr(r),
                             "lambda": repr(lam_by[name]), "iters": iters,
                             "wall_seconds": repr(wall),
                             "efficiency_pct": repr(eff)})
    return _write_csv(Path(out_dir) / "weak_scaling.csv", WEAK_COLUMNS, rows)


KNOWN_SECTIONS = ("convergence", "strong_scaling", "weak_scaling")


def run_experiment(config_path, out_dir=None, timings=None):
    """Run every experiment section in a TOML config; returns {section: csv_path}.

    `timings`, when given, overrides measured wall times in the weak-scaling
    driver (a {(solver, sparsity, P): seconds} mapping) so efficiency columns
    can be checked against hand-computed values.
    """
    config_path = Path(config_path)
    try:
        with open(config_path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {config_path}: {exc}") from exc
    unknown = set(cfg) - set(KNOWN_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if not cfg:
        raise ConfigError(f"{config_path} has no experiment sections")
    out_dir = Path(out_dir) if out_dir is not None else config_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if "convergence" in cfg:
        written["convergence"] = _convergence(cfg["convergence"], out_dir)
    if "strong_scaling" in cfg:
        written["strong_scaling"] = _strong_scaling(cfg["strong_scaling"], out_dir)
    if "weak_scaling" in cfg:
        written["weak_scaling"] = _weak_scaling(cfg["weak_scaling"], out_dir,
                                                timings=timings)
    return written

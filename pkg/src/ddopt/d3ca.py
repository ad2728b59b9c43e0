"""Doubly-distributed dual coordinate ascent.

Every grid block runs a local SDCA pass against snapshots of its dual and
primal blocks; dual changes are tree-averaged across the feature blocks that
share each dual slice, and the primal vector is recovered from the fresh
duals through w(alpha) = (1/(lam n)) sum_i alpha_i x_i.  Two reduction
phases per outer iteration: dual averaging, then primal recovery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import ClusterSim, rng_stream
from .losses import dual_objective, primal_objective
from .model import (DualVector, InfeasibleDual, IterationRecord, Loss,
                    PrimalVector, RunHistory, validate_dataset)

FEAS_TOL = 1e-12


class ZeroDenominator(Exception):
    pass


@dataclass(frozen=True)
class D3caConfig:
    """outer_iters T, local_iters H (SDCA passes per block per outer
    iteration), the beta = lam/t step-size variant, and the damping rule for
    the dual update: "pq" averages by 1/(P*Q), "q" by 1/Q."""

    outer_iters: int = 10
    local_iters: int = 1
    use_beta_stepsize: bool = False
    seed: int = 0
    averaging: str = "pq"

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.local_iters < 1:
            raise ValueError("local_iters must be >= 1")
        if self.averaging not in ("pq", "q"):
            raise ValueError('averaging must be "pq" or "q"')


def _hinge_delta(alpha_i, margin, y_i, lam_n, denom, target=1.0):
    u = lam_n * (target - margin * y_i) / denom + alpha_i * y_i
    if u < 0.0:
        u = 0.0
    elif u > 1.0:
        u = 1.0
    return u * y_i - alpha_i


def _logistic_delta(alpha_i, margin, y_i, lam_n, denom, conj_scale=1.0,
                    tol=1e-12, max_iter=200):
    """Exact single-coordinate ascent step for the logistic dual.

    Solves, for u = (alpha_i + delta) y_i in (0,1),
        conj_scale*log((1-u)/u) - y_i*margin - (u - alpha_i*y_i) * denom/lam_n = 0
    (stationarity of the local dual in delta) by safeguarded Newton; the left
    side is strictly decreasing so the root is unique.  conj_scale weights the
    conjugate (entropy) term: a column block holding 1/Q of the features uses
    conj_scale = 1/Q so that the Q local objectives sum to the global dual.
    """
    a = alpha_i * y_i
    b = y_i * margin
    c = denom / lam_n
    lo, hi = 0.0, 1.0
    u = min(max(a, 1e-9), 1.0 - 1e-9)
    for _ in range(max_iter):
        r = conj_scale * math.log((1.0 - u) / u) - b - (u - a) * c
        if r > 0.0:
            lo = u
        else:
            hi = u
        du = r / (-conj_scale / (u * (1.0 - u)) - c)
        u_new = u - du
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        if abs(u_new - u) <= tol:
            u = u_new
            break
        u = u_new
    return (u - a) * y_i


def sdca_hinge_step(alpha_i, w, x_i, y_i, lam, n, denom):
    """Closed-form dual coordinate step for hinge loss:
        delta = y_i * clip(lam*n*(1 - x_i.w * y_i)/denom + alpha_i*y_i, 0, 1) - alpha_i
    with denom = ||x_i||^2, or beta = lam/t under the beta step-size variant.
    alpha_i + delta always lands inside the box constraint."""
    if denom <= 0.0:
        raise ZeroDenominator(f"denominator must be positive, got {denom}")
    margin = float(np.dot(np.asarray(x_i, dtype=np.float64),
                          np.asarray(w, dtype=np.float64)))
    return _hinge_delta(float(alpha_i), margin, float(y_i), lam * n, float(denom))


def local_sdca(alpha_p, w_q, block, spec, H=1, t=1, use_beta=False, rng=None,
               conj_scale=1.0):
    """H single-coordinate passes (H * n_p steps) on one block.

    Works on private copies of the dual and primal blocks — the caller's
    arrays are never touched and other blocks never see intermediate state.
    The local primal copy tracks each step via w += (delta/(lam n)) x_i.
    Returns the accumulated dual change for this block.  Coordinates with an
    empty row are skipped unless the beta step size is active.

    conj_scale weights the conjugate term of the local objective.  A solver
    whose blocks each hold 1/Q of the feature columns passes conj_scale = 1/Q
    so the Q per-column objectives add up to the global dual; the stationary
    hinge step then aims each column block at its 1/Q share of the unit
    margin.  With a single column block (conj_scale = 1) the step reduces to
    the classic closed form in sdca_hinge_step.
    """
    n_p = block.rows
    alpha = np.array(alpha_p, dtype=np.float64)
    w = np.array(w_q, dtype=np.float64)
    delta = np.zeros(n_p)
    steps = int(H) * n_p
    if steps <= 0:
        return delta
    if rng is None:
        rng = rng_stream(0, "sdca-local")
    idx = rng.integers(0, n_p, size=steps)
    y = block.labels
    lam_n = spec.lam * spec.n
    hinge = spec.loss is Loss.HINGE
    beta = (spec.lam / t) if use_beta else None
    sq = block.row_sq_norms
    sparse = block.is_sparse
    if sparse:
        indptr = block.matrix.indptr
        indices = block.matrix.indices
        data = block.matrix.data
    else:
        mat = block.matrix
    for raw in idx:
        i = int(raw)
        denom = beta if use_beta else float(sq[i])
        if denom <= 0.0:
            continue
        if sparse:
            a, b = indptr[i], indptr[i + 1]
            cols = indices[a:b]
            vals = data[a:b]
            margin = float(np.dot(vals, w[cols]))
        else:
            row = mat[i]
            margin = float(np.dot(row, w))
        if hinge:
            d = _hinge_delta(alpha[i], margin, y[i], lam_n, denom, conj_scale)
        else:
            d = _logistic_delta(alpha[i], margin, y[i], lam_n, denom, conj_scale)
        if d != 0.0:
            alpha[i] += d
            delta[i] += d
            if sparse:
                w[cols] += (d / lam_n) * vals
            else:
                w += (d / lam_n) * row
    return delta


def _check_box(alpha_p, labels, row_offset):
    u = alpha_p * labels
    bad = np.where((u < -FEAS_TOL) | (u > 1.0 + FEAS_TOL))[0]
    if bad.size:
        i = int(bad[0])
        raise InfeasibleDual(row_offset + i, float(u[i]))


def run_d3ca(blocks, grid, spec, config, sim=None, threads=None, f_star=None,
             on_iteration=None, target_rel_opt=None):
    """Run the doubly-distributed dual ascent; returns (w, alpha, history).

    Starts from alpha = 0, w = 0 and warm-starts every outer iteration from
    the previous one.  When f_star is given each record carries
    (F - f_star)/f_star, and target_rel_opt stops the run early once that
    value is reached.  on_iteration(t, w, alpha), when given, is called after
    each outer iteration with the live solution objects.
    """
    cells = validate_dataset(blocks, grid)
    P, Q = grid.P, grid.Q
    if sim is None:
        sim = ClusterSim(P * Q, threads=threads)
    w = PrimalVector.zeros(grid)
    alpha = DualVector.zeros(grid)
    history = RunHistory()
    lam_n = spec.lam * spec.n
    scale = 1.0 / (P * Q) if config.averaging == "pq" else 1.0 / Q

    for t in range(1, config.outer_iters + 1):
        def solve_task(p, q, a_view, w_view):
            def task():
                rng = rng_stream(config.seed, "d3ca", t, p, q)
                return local_sdca(a_view, w_view, cells[(p, q)], spec,
                                  H=config.local_iters, t=t,
                                  use_beta=config.use_beta_stepsize, rng=rng,
                                  conj_scale=1.0 / Q)
            return task

        tasks = [solve_task(p, q, alpha.blocks[p], w.blocks[q])
                 for p in range(P) for q in range(Q)]
        deltas = sim.run_round(tasks)

        with sim.phase():  # dual averaging across the blocks sharing each alpha_[p,.]
            for p in range(P):
                total = sim.tree_aggregate([deltas[p * Q + q] for q in range(Q)], np.add)
                alpha.blocks[p] = alpha.blocks[p] + scale * total
                _check_box(alpha.blocks[p], cells[(p, 0)].labels, grid.row_range(p)[0])

        def recover_task(p, q):
            def task():
                return np.asarray(cells[(p, q)].matrix.T @ alpha.blocks[p]).ravel()
            return task

        contribs = sim.run_round([recover_task(p, q) for p in range(P) for q in range(Q)])
        with sim.phase():  # primal recovery from the updated duals
            for q in range(Q):
                agg = sim.tree_aggregate([contribs[p * Q + q] for p in range(P)], np.add)
                w.blocks[q] = agg / lam_n

        f_val = primal_objective(w, cells, grid, spec)
        d_val = dual_objective(alpha, cells, grid, spec)
        rel = None if f_star is None else (f_val - f_star) / f_star
        history.append(IterationRecord(t=t, primal_value=f_val, dual_value=d_val,
                                       rel_opt=rel, reduce_ops=sim.reduce_rounds,
                                       elements_communicated=sim.scalars_communicated))
        if on_iteration is not None:
            on_iteration(t, w, alpha)
        if target_rel_opt is not None and rel is not None and rel <= target_rel_opt:
            break
    return w, alpha, history

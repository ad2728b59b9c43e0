"""Randomized distributed stochastic algorithm with variance reduction.

Each outer iteration: compute the full gradient mu at the reference point
w_tilde (one reduction phase), hand every block a freshly drawn sub-block of
its feature columns, run L variance-reduced stochastic steps per block on
that slice only, and merge (second reduction phase) — by concatenating the
disjoint slices, or by averaging full column blocks over the P row
partitions in the "avg" variant.

Inside a block, margins are computed against the block's own columns only:
coordinates outside the active slice stay frozen at the reference vector, so
no communication happens between the two phases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import ClusterSim, rng_stream, tree_reduce
from .losses import loss_derivatives, primal_objective
from .model import (DimensionMismatch, IterationRecord, PrimalVector,
                    RunHistory, validate_dataset)
from .partition import assign_subblocks


class MissingSlice(Exception):
    def __init__(self, q, k):
        super().__init__(f"no solution slice for column block {q}, piece {k}")
        self.q = q
        self.k = k


@dataclass(frozen=True)
class RadisaConfig:
    """batch_size L (inner steps per block per outer iteration), step-size
    constant gamma for the schedule eta_t = gamma/(1+sqrt(t-1)), iteration
    budget, and the merge variant ("disjoint" or "avg").

    gradient_lag k recomputes the full gradient only every k-th iteration;
    scale_gamma_with_p multiplies gamma by P (step-size adjustment for
    strong-scaling sweeps)."""

    batch_size: int
    gamma: float = 1.0
    outer_iters: int = 10
    variant: str = "disjoint"
    seed: int = 0
    gradient_lag: int = 1
    scale_gamma_with_p: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.variant not in ("disjoint", "avg"):
            raise ValueError('variant must be "disjoint" or "avg"')
        if self.gradient_lag < 1:
            raise ValueError("gradient_lag must be >= 1")


def step_size(gamma, t):
    """eta_t = gamma / (1 + sqrt(t-1)); eta_1 = gamma, strictly decreasing."""
    return gamma / (1.0 + math.sqrt(t - 1.0))


def full_gradient(w_tilde, blocks, grid, spec, sim=None, return_margins=False):
    """mu = (1/n) sum_i f_i'(w.x_i) x_i + lam w, assembled block-wise.

    Row-wise reduction builds the margins across column blocks, each block
    then contributes its columns' slice, and a column-wise reduction sums
    over row partitions.  With a ClusterSim the reductions are metered.

    With return_margins=True also returns the per-row-partition margin
    vectors x_i . w_tilde (a list indexed by p).  They are a byproduct of
    the same reduction, and the inner loops reuse them so that each sampled
    row's reference gradient is exact without any further communication.
    """
    cells = blocks if isinstance(blocks, dict) else {(b.p, b.q): b for b in blocks}
    reduce_fn = (lambda vals: sim.tree_aggregate(vals, np.add)) if sim is not None \
        else (lambda vals: tree_reduce(vals, np.add))
    all_margins = []
    fprime = []
    for p in range(grid.P):
        parts = [np.asarray(cells[(p, q)].matrix @ w_tilde.blocks[q]).ravel()
                 for q in range(grid.Q)]
        margins = reduce_fn(parts)
        all_margins.append(margins)
        fprime.append(loss_derivatives(margins, cells[(p, 0)].labels, spec.loss))
    out = []
    for q in range(grid.Q):
        contribs = [np.asarray(cells[(p, q)].matrix.T @ fprime[p]).ravel()
                    for p in range(grid.P)]
        out.append(reduce_fn(contribs) / spec.n + spec.lam * w_tilde.blocks[q])
    grad = PrimalVector(out)
    if return_margins:
        return grad, all_margins
    return grad


def svrg_inner(w_start, w_tilde_block, mu_slice, block, spec, L, eta_t, rng,
               lo=None, hi=None, anchor_margins=None):
    """L variance-reduced steps on the coordinate slice [lo, hi) of a block.

    w_start holds the slice's starting values and w_tilde_block the anchor
    over the block's full column range.  anchor_margins carries each local
    row's margin x_j . w_tilde over *all* feature columns (the byproduct of
    the full-gradient reduction); when omitted it is computed against the
    block's own columns, which is the complete margin whenever the block
    spans every feature.  Because only the slice moves during the loop, a
    sampled row's live margin is exactly its anchor margin plus the dot
    product of the row's slice entries with the slice drift.  Each step
    samples a local row j and moves the slice by

        -eta_t * ((f'_live - f'_anchor) x_j[lo:hi] + lam*(w - w_anchor) + mu_slice)

    which equals the variance-reduced gradient difference including the
    lam*w regularizer term.  When the loop starts at the anchor the
    correction cancels exactly and the first direction is mu_slice itself.
    Returns the updated slice; the inputs are not mutated.
    """
    if lo is None:
        lo, hi = 0, block.cols
    out = np.array(w_start, dtype=np.float64)
    if hi - lo == 0 or L == 0:
        return out
    anchor = np.asarray(w_tilde_block, dtype=np.float64)
    if len(out) != hi - lo or len(anchor) != block.cols:
        raise DimensionMismatch(
            f"slice [{lo},{hi}) of a {block.cols}-column block got "
            f"start of length {len(out)} and reference of length {len(anchor)}")
    if anchor_margins is None:
        base = np.asarray(block.matrix @ anchor, dtype=np.float64).ravel()
    else:
        base = np.asarray(anchor_margins, dtype=np.float64)
        if len(base) != block.rows:
            raise DimensionMismatch(
                f"block with {block.rows} rows got {len(base)} anchor margins")
    mu_slice = np.asarray(mu_slice, dtype=np.float64)
    y = block.labels
    lam = spec.lam
    loss = spec.loss
    anchor_s = anchor[lo:hi]
    d_base = np.asarray(loss_derivatives(base, y, loss), dtype=np.float64)
    idx = rng.integers(0, block.rows, size=int(L))
    sparse = block.is_sparse
    if sparse:
        indptr = block.matrix.indptr
        indices = block.matrix.indices
        data = block.matrix.data
    else:
        mat = block.matrix
    w_s = out
    for raw in idx:
        j = int(raw)
        drift = w_s - anchor_s
        if sparse:
            a, b = indptr[j], indptr[j + 1]
            cols = indices[a:b]
            inside = (cols >= lo) & (cols < hi)
            ci = cols[inside] - lo
            vi = data[a:b][inside]
            z_live = float(base[j]) + float(np.dot(vi, drift[ci]))
            d_live = float(loss_derivatives(z_live, y[j], loss))
            step = lam * drift + mu_slice
            step[ci] += (d_live - d_base[j]) * vi
        else:
            xs = mat[j, lo:hi]
            z_live = float(base[j]) + float(np.dot(xs, drift))
            d_live = float(loss_derivatives(z_live, y[j], loss))
            step = (d_live - d_base[j]) * xs + lam * drift + mu_slice
        w_s = w_s - eta_t * step
    return w_s


def merge_solutions(slices, grid, variant):
    """Build the next global iterate from per-block results.

    slices is {(q, k): vector}.  For "disjoint", k is a sub-block index and
    the P slices of each column block concatenate in sub-block order; for
    "avg", k is a row-partition index and the P full-block solutions are
    averaged.  Raises MissingSlice when a piece is absent.
    """
    if variant not in ("disjoint", "avg"):
        raise ValueError('variant must be "disjoint" or "avg"')
    out = []
    for q in range(grid.Q):
        pieces = []
        for k in range(grid.P):
            if (q, k) not in slices:
                raise MissingSlice(q, k)
            pieces.append(np.asarray(slices[(q, k)], dtype=np.float64))
        c0, c1 = grid.col_range(q)
        if variant == "disjoint":
            for k, piece in enumerate(pieces):
                s0, s1 = grid.sub_range(q, k)
                if len(piece) != s1 - s0:
                    raise DimensionMismatch(
                        f"piece ({q},{k}) has length {len(piece)}, expected {s1 - s0}")
            merged = np.concatenate(pieces) if pieces else np.zeros(0)
            if len(merged) != c1 - c0:
                raise DimensionMismatch(
                    f"column block {q} merged to length {len(merged)}, expected {c1 - c0}")
            out.append(merged)
        else:
            for k, piece in enumerate(pieces):
                if len(piece) != c1 - c0:
                    raise DimensionMismatch(
                        f"piece ({q},{k}) has length {len(piece)}, expected {c1 - c0}")
            out.append(tree_reduce(pieces, np.add) / grid.P)
    return PrimalVector(out)


def run_radisa(blocks, grid, spec, config, sim=None, threads=None, f_star=None,
               on_iteration=None, target_rel_opt=None):
    """Run the variance-reduced distributed solver; returns (w, history).

    Starts at w_tilde = 0.  Per outer iteration: one metered reduction phase
    for the full gradient (skipped on lag iterations), the parallel inner
    loops, and one metered phase for the merge.  When f_star is given each
    record carries (F - f_star)/f_star, and target_rel_opt stops the run
    early once that value is reached.  on_iteration(t, w), when given, is
    called after each outer iteration.
    """
    cells = validate_dataset(blocks, grid)
    P, Q = grid.P, grid.Q
    if sim is None:
        sim = ClusterSim(P * Q, threads=threads)
    w_tilde = PrimalVector.zeros(grid)
    history = RunHistory()
    gamma = config.gamma * P if config.scale_gamma_with_p else config.gamma
    anchor = None
    mu = None
    anchor_margins = None

    for t in range(1, config.outer_iters + 1):
        if anchor is None or (t - 1) % config.gradient_lag == 0:
            anchor = w_tilde.copy()
            with sim.phase():
                mu, anchor_margins = full_gradient(anchor, cells, grid, spec,
                                                   sim=sim, return_margins=True)
        eta = step_size(gamma, t)
        assignment = assign_subblocks(grid, t, config.seed)

        def inner_task(p, q, w_now_q):
            def task():
                if config.variant == "disjoint":
                    lo, hi = grid.sub_range(q, int(assignment[q][p]))
                else:
                    lo, hi = 0, len(w_now_q)
                rng = rng_stream(config.seed, "radisa", t, p, q)
                return svrg_inner(w_now_q[lo:hi].copy(), anchor.blocks[q],
                                  mu.blocks[q][lo:hi], cells[(p, q)], spec,
                                  config.batch_size, eta, rng, lo, hi,
                                  anchor_margins=anchor_margins[p])
            return task

        results = sim.run_round([inner_task(p, q, w_tilde.blocks[q])
                                 for p in range(P) for q in range(Q)])

        with sim.phase():  # merge: gather the pieces of each column block
            slices = {}
            for p in range(P):
                for q in range(Q):
                    k = int(assignment[q][p]) if config.variant == "disjoint" else p
                    slices[(q, k)] = results[p * Q + q]
            w_tilde = merge_solutions(slices, grid, config.variant)
            for q in range(Q):
                c0, c1 = grid.col_range(q)
                sim.account_transfer((P - 1) * (c1 - c0))

        f_val = primal_objective(w_tilde, cells, grid, spec)
        rel = None if f_star is None else (f_val - f_star) / f_star
        history.append(IterationRecord(t=t, primal_value=f_val, dual_value=None,
                                       rel_opt=rel, reduce_ops=sim.reduce_rounds,
                                       elements_communicated=sim.scalars_communicated))
        if on_iteration is not None:
            on_iteration(t, w_tilde)
        if target_rel_opt is not None and rel is not None and rel <= target_rel_opt:
            break
    return w_tilde, history

"""Loss functions, convex conjugates, and the primal/dual objectives.

Primal:  F(w) = (1/n) sum_i f_i(w.x_i) + (lam/2)||w||^2
Dual:    D(alpha) = (1/n) sum_i -phi*_i(-alpha_i) - (lam/2)||w(alpha)||^2
Map:     w(alpha) = (1/(lam n)) sum_i alpha_i x_i

For hinge f_i(z) = max(0, 1 - y_i z):  -phi*_i(-a) = a y_i on 0 <= a y_i <= 1.
For logistic f_i(z) = log(1 + exp(-y_i z)):  -phi*_i(-a) = H(a y_i), the
binary entropy, on 0 <= a y_i <= 1.  F(w) - D(alpha) >= 0 for any feasible
pair and reaches 0 at the optimum, which is what every convergence
certificate here relies on.

Objectives are evaluated the way the distributed solvers assemble them: each
block contributes partial inner products over its columns, row-wise tree
reduction assembles the margins w.x_i, and a second reduction accumulates
losses / gradient slices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .engine import tree_reduce
from .model import (DimensionMismatch, DualVector, IndexOutOfRange,
                    InfeasibleDual, Loss, PrimalVector)

FEAS_TOL = 1e-12


@dataclass(frozen=True)
class LossEval:
    """Value and derivative of one f_i at z = w.x_i (subgradient for hinge)."""

    value: float
    derivative: float


def loss_values(z, y, loss):
    """Vectorized f_i(z) for margins z and labels y."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if loss is Loss.HINGE:
        return np.maximum(0.0, 1.0 - y * z)
    return np.logaddexp(0.0, -y * z)


def loss_derivatives(z, y, loss):
    """Vectorized d f_i / d z.  Hinge uses subgradient 0 at the kink."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if loss is Loss.HINGE:
        return np.where(y * z < 1.0, -y, 0.0)
    return -y * expit(-y * z)


def evaluate(z, y, loss):
    """Scalar LossEval of one observation."""
    return LossEval(value=float(loss_values(z, y, loss)),
                    derivative=float(loss_derivatives(z, y, loss)))


def _cells(blocks, grid):
    if isinstance(blocks, dict):
        return blocks
    return {(b.p, b.q): b for b in blocks}


def _check_primal(w, grid):
    if len(w.blocks) != grid.Q:
        raise DimensionMismatch(f"expected {grid.Q} primal blocks, got {len(w.blocks)}")
    for q in range(grid.Q):
        c0, c1 = grid.col_range(q)
        if len(w.blocks[q]) != c1 - c0:
            raise DimensionMismatch(f"primal block {q} has length {len(w.blocks[q])}, "
                                    f"expected {c1 - c0}", q=q)


def _check_dual(alpha, grid):
    if len(alpha.blocks) != grid.P:
        raise DimensionMismatch(f"expected {grid.P} dual blocks, got {len(alpha.blocks)}")
    for p in range(grid.P):
        r0, r1 = grid.row_range(p)
        if len(alpha.blocks[p]) != r1 - r0:
            raise DimensionMismatch(f"dual block {p} has length {len(alpha.blocks[p])}, "
                                    f"expected {r1 - r0}", p=p)


def block_margins(w, blocks, grid):
    """Margins w.x_i per row partition: tree-reduced over column blocks."""
    _check_primal(w, grid)
    cells = _cells(blocks, grid)
    out = []
    for p in range(grid.P):
        parts = [cells[(p, q)].matrix @ w.blocks[q] for q in range(grid.Q)]
        out.append(tree_reduce([np.asarray(v).ravel() for v in parts], np.add))
    return out


def primal_objective(w, blocks, grid, spec):
    """F(w) over the partitioned dataset."""
    cells = _cells(blocks, grid)
    margins = block_margins(w, cells, grid)
    sums = [float(np.sum(loss_values(margins[p], cells[(p, 0)].labels, spec.loss)))
            for p in range(grid.P)]
    total = tree_reduce(sums, lambda a, b: a + b)
    return total / spec.n + 0.5 * spec.lam * w.norm_sq()


def _conjugate_terms(alpha, labels_by_p, loss):
    """Per-partition sums of -phi*_i(-alpha_i); raises InfeasibleDual."""
    sums = []
    offset = 0
    for p, a in enumerate(alpha.blocks):
        u = np.asarray(a) * labels_by_p[p]
        bad = np.where((u < -FEAS_TOL) | (u > 1.0 + FEAS_TOL))[0]
        if bad.size:
            i = int(bad[0])
            raise InfeasibleDual(offset + i, float(u[i]))
        if loss is Loss.HINGE:
            sums.append(float(np.sum(u)))
        else:
            uc = np.clip(u, 0.0, 1.0)
            sums.append(float(np.sum(-(xlogy(uc, uc) + xlogy(1.0 - uc, 1.0 - uc)))))
        offset += len(u)
    return sums


def dual_objective(alpha, blocks, grid, spec):
    """D(alpha) over the partitioned dataset (checks dual feasibility)."""
    _check_dual(alpha, grid)
    cells = _cells(blocks, grid)
    labels = [cells[(p, 0)].labels for p in range(grid.P)]
    sums = _conjugate_terms(alpha, labels, spec.loss)
    w = primal_from_dual(alpha, cells, grid, spec)
    return tree_reduce(sums, lambda a, b: a + b) / spec.n - 0.5 * spec.lam * w.norm_sq()


def primal_from_dual(alpha, blocks, grid, spec):
    """w(alpha) = (1/(lam n)) sum_i alpha_i x_i, accumulated in ascending p."""
    _check_dual(alpha, grid)
    cells = _cells(blocks, grid)
    scale = 1.0 / (spec.lam * spec.n)
    out = []
    for q in range(grid.Q):
        acc = None
        for p in range(grid.P):
            part = np.asarray(cells[(p, q)].matrix.T @ alpha.blocks[p]).ravel()
            acc = part if acc is None else acc + part
        out.append(scale * acc)
    return PrimalVector(out)


def duality_gap(w, alpha, blocks, grid, spec):
    """F(w) - D(alpha); nonnegative (to float tolerance) for feasible pairs."""
    cells = _cells(blocks, grid)
    return primal_objective(w, cells, grid, spec) - dual_objective(alpha, cells, grid, spec)


def stochastic_gradient(w_block, x_row, y, spec, bounds=None):
    """Gradient of f_j(w.x_j) + (lam/2)||w||^2 in the coordinates [lo, hi).

    The margin uses exactly the coordinates supplied (a block's own columns);
    `bounds` restricts which partial derivatives are returned.  With
    bounds=None the full gradient over the supplied coordinates is returned.
    """
    w_block = np.asarray(w_block, dtype=np.float64)
    x_row = np.asarray(x_row, dtype=np.float64)
    if x_row.shape != w_block.shape:
        raise DimensionMismatch(f"row shape {x_row.shape} != weight shape {w_block.shape}")
    if bounds is None:
        lo, hi = 0, len(w_block)
    else:
        lo, hi = bounds
        if not (0 <= lo <= hi <= len(w_block)):
            raise IndexOutOfRange(f"slice [{lo},{hi}) outside [0,{len(w_block)})")
    z = float(x_row @ w_block)
    d = float(loss_derivatives(z, y, spec.loss))
    return d * x_row[lo:hi] + spec.lam * w_block[lo:hi]

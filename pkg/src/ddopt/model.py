"""Domain types for doubly-partitioned datasets and block-structured solutions.

A dataset is tiled into a P x Q grid: P row (observation) partitions times
Q column (feature) partitions.  Block (p, q) holds the rows of partition p
restricted to the columns of partition q; labels belong to the row partition
and are shared by all Q blocks in it.  Indices p, q are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class Loss(Enum):
    HINGE = "hinge"
    LOGISTIC = "logistic"


class ModelError(Exception):
    pass


class DimensionMismatch(ModelError):
    def __init__(self, detail, p=None, q=None):
        super().__init__(detail)
        self.p = p
        self.q = q


class MissingBlock(ModelError):
    def __init__(self, p, q):
        super().__init__(f"no block at grid cell ({p},{q})")
        self.p = p
        self.q = q


class LabelMismatch(ModelError):
    def __init__(self, p):
        super().__init__(f"labels disagree across blocks of row partition {p}")
        self.p = p


class InfeasibleDual(ModelError):
    def __init__(self, i, value):
        super().__init__(f"dual coordinate {i} outside its domain: alpha*y = {value}")
        self.i = i
        self.value = value


class IndexOutOfRange(ModelError):
    pass


class InvalidPartitionCount(ModelError):
    pass


def _is_matrix(x):
    return sp.issparse(x) or (isinstance(x, np.ndarray) and x.ndim == 2)


@dataclass(frozen=True)
class ProblemSpec:
    """Problem description: sizes, regularization weight, loss kind.

    The objective solved everywhere is
        F(w) = (1/n) sum_i f_i(w.x_i) + (lam/2) ||w||^2
    whose dual (per-observation variables alpha) is
        D(alpha) = (1/n) sum_i -phi*_i(-alpha_i) - (lam/2) ||w(alpha)||^2
    with the primal-dual map w(alpha) = (1/(lam*n)) sum_i alpha_i x_i.
    """

    n: int
    m: int
    lam: float
    loss: Loss = Loss.HINGE

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        if not self.lam > 0:
            raise ValueError(f"regularization weight must be positive, got {self.lam}")
        if not isinstance(self.loss, Loss):
            object.__setattr__(self, "loss", Loss(self.loss))


@dataclass(frozen=True, eq=False)
class DataBlock:
    """One grid cell: matrix x_[p,q] (n_p x m_q) plus the row partition's labels."""

    p: int
    q: int
    matrix: object          # (n_p, m_q) ndarray or scipy CSR
    labels: np.ndarray      # length n_p, entries in {-1, +1}

    def __post_init__(self):
        if not _is_matrix(self.matrix):
            raise DimensionMismatch("matrix must be a 2-d array or sparse matrix",
                                    self.p, self.q)
        labels = np.asarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "labels", labels)
        if labels.shape != (self.matrix.shape[0],):
            raise DimensionMismatch(
                f"labels length {labels.shape} does not match {self.matrix.shape[0]} rows",
                self.p, self.q)
        if not np.all(np.abs(labels) == 1.0):
            raise ValueError("labels must all be -1 or +1")

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    @property
    def is_sparse(self):
        return sp.issparse(self.matrix)

    @cached_property
    def row_sq_norms(self):
        """Squared euclidean norm of each row (within this block's columns)."""
        if self.is_sparse:
            return np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", self.matrix, self.matrix)


def _check_bounds(bounds, total, what, strict=True):
    bounds = np.asarray(bounds, dtype=np.int64)
    if bounds[0] != 0 or bounds[-1] != total:
        raise ValueError(f"{what} must cover [0, {total}), got {bounds.tolist()}")
    diffs = np.diff(bounds)
    if strict and np.any(diffs <= 0):
        raise ValueError(f"{what} must be strictly increasing, got {bounds.tolist()}")
    if not strict and np.any(diffs < 0):
        raise ValueError(f"{what} must be non-decreasing, got {bounds.tolist()}")
    return bounds


@dataclass(frozen=True, eq=False)
class PartitionGrid:
    """Row/column boundary metadata for the P x Q tiling.

    row_bounds has P+1 global row offsets and col_bounds Q+1 global column
    offsets, both strictly increasing.  sub_bounds[q] has P+1 offsets local to
    column block q (0 .. m_q) splitting it into P sub-blocks; sub-blocks may
    be empty when m_q < P.
    """

    P: int
    Q: int
    row_bounds: np.ndarray
    col_bounds: np.ndarray
    sub_bounds: tuple = field(default=None)

    def __post_init__(self):
        rb = _check_bounds(self.row_bounds, int(np.asarray(self.row_bounds)[-1]), "row_bounds")
        cb = _check_bounds(self.col_bounds, int(np.asarray(self.col_bounds)[-1]), "col_bounds")
        if len(rb) != self.P + 1 or len(cb) != self.Q + 1:
            raise ValueError("bounds length does not match partition counts")
        object.__setattr__(self, "row_bounds", rb)
        object.__setattr__(self, "col_bounds", cb)
        subs = self.sub_bounds
        if subs is None:
            raise ValueError("sub_bounds is required")
        if len(subs) != self.Q:
            raise ValueError("need one sub_bounds array per column block")
        checked = []
        for q, sub in enumerate(subs):
            width = int(cb[q + 1] - cb[q])
            sub = _check_bounds(sub, width, f"sub_bounds[{q}]", strict=False)
            if len(sub) != self.P + 1:
                raise ValueError("sub_bounds arrays must have P+1 offsets")
            checked.append(sub)
        object.__setattr__(self, "sub_bounds", tuple(checked))

    @property
    def n(self):
        return int(self.row_bounds[-1])

    @property
    def m(self):
        return int(self.col_bounds[-1])

    def row_range(self, p):
        return int(self.row_bounds[p]), int(self.row_bounds[p + 1])

    def col_range(self, q):
        return int(self.col_bounds[q]), int(self.col_bounds[q + 1])

    def sub_range(self, q, k):
        """Local (within column block q) bounds of sub-block k."""
        sub = self.sub_bounds[q]
        return int(sub[k]), int(sub[k + 1])

    def block_shape(self, p, q):
        r0, r1 = self.row_range(p)
        c0, c1 = self.col_range(q)
        return r1 - r0, c1 - c0


@dataclass(eq=False)
class PrimalVector:
    """Feature-partitioned weights: Q blocks, block q of length m_q."""

    blocks: list

    @classmethod
    def zeros(cls, grid):
        return cls([np.zeros(grid.col_range(q)[1] - grid.col_range(q)[0])
                    for q in range(grid.Q)])

    @classmethod
    def from_array(cls, arr, grid):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (grid.m,):
            raise DimensionMismatch(f"expected length {grid.m}, got {arr.shape}")
        return cls([arr[grid.col_range(q)[0]:grid.col_range(q)[1]].copy()
                    for q in range(grid.Q)])

    def concat(self):
        return np.concatenate([np.asarray(b, dtype=np.float64) for b in self.blocks])

    def copy(self):
        return PrimalVector([np.array(b, dtype=np.float64) for b in self.blocks])

    def norm_sq(self):
        return float(sum(float(np.dot(b, b)) for b in self.blocks))


@dataclass(eq=False)
class DualVector:
    """Observation-partitioned dual variables: P blocks, block p of length n_p."""

    blocks: list

    @classmethod
    def zeros(cls, grid):
        return cls([np.zeros(grid.row_range(p)[1] - grid.row_range(p)[0])
                    for p in range(grid.P)])

    @classmethod
    def from_array(cls, arr, grid):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (grid.n,):
            raise DimensionMismatch(f"expected length {grid.n}, got {arr.shape}")
        return cls([arr[grid.row_range(p)[0]:grid.row_range(p)[1]].copy()
                    for p in range(grid.P)])

    def concat(self):
        return np.concatenate([np.asarray(b, dtype=np.float64) for b in self.blocks])

    def copy(self):
        return DualVector([np.array(b, dtype=np.float64) for b in self.blocks])


@dataclass(frozen=True)
class IterationRecord:
    """One global iteration: objectives, optional rel. optimality, cumulative
    communication counters at the time of recording."""

    t: int
    primal_value: float
    dual_value: float = None       # None for primal-only solvers
    rel_opt: float = None
    reduce_ops: int = 0
    elements_communicated: int = 0

    @property
    def gap(self):
        if self.dual_value is None:
            return None
        return self.primal_value - self.dual_value


class RunHistory:
    """Per-iteration records with the weak-duality and ordering invariants."""

    def __init__(self):
        self.records = []

    def append(self, rec):
        if self.records and rec.t <= self.records[-1].t:
            raise ValueError("iteration indices must be strictly increasing")
        if rec.dual_value is not None and rec.primal_value < rec.dual_value - 1e-9:
            raise ValueError(
                f"weak duality violated at t={rec.t}: "
                f"F={rec.primal_value!r} < D={rec.dual_value!r}")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        if not isinstance(other, RunHistory):
            return NotImplemented
        return self.records == other.records

    @property
    def final(self):
        return self.records[-1]


def validate_dataset(blocks, grid):
    """Check that `blocks` tile `grid` exactly with consistent labels.

    Raises MissingBlock, DimensionMismatch, or LabelMismatch; returns the
    blocks indexed as a {(p, q): block} dict on success.
    """
    by_cell = {}
    for blk in blocks:
        key = (blk.p, blk.q)
        if key in by_cell:
            raise ValueError(f"duplicate block at {key}")
        by_cell[key] = blk
    for p in range(grid.P):
        for q in range(grid.Q):
            if (p, q) not in by_cell:
                raise MissingBlock(p, q)
            blk = by_cell[(p, q)]
            if (blk.rows, blk.cols) != grid.block_shape(p, q):
                raise DimensionMismatch(
                    f"block ({p},{q}) is {blk.rows}x{blk.cols}, "
                    f"grid expects {grid.block_shape(p, q)}", p, q)
    for p in range(grid.P):
        ref = by_cell[(p, 0)].labels
        for q in range(1, grid.Q):
            if not np.array_equal(by_cell[(p, q)].labels, ref):
                raise LabelMismatch(p)
    extra = set(by_cell) - {(p, q) for p in range(grid.P) for q in range(grid.Q)}
    if extra:
        raise DimensionMismatch(f"blocks outside the grid: {sorted(extra)}")
    return by_cell

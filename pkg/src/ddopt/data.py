"""Synthetic dataset generation, standardization, and dataset partitioning.

Synthetic recipe: a planted weight vector and the feature entries are drawn
from U[-1,1]; labels are sign(X w) (ties broken to +1) with each label
flipped independently with probability 0.1; feature columns are then scaled
to unit sample variance.  Sparse mode places exactly round(density * m)
uniformly chosen nonzeros per row before labeling and scaling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .engine import rng_stream
from .model import DataBlock, validate_dataset
from .partition import make_grid

FLIP_PROB = 0.1


class InvalidDensity(Exception):
    pass


@dataclass(eq=False)
class Dataset:
    """Unpartitioned dataset: matrix X (dense ndarray or CSR) and labels y."""

    X: object
    y: np.ndarray

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def nnz(self):
        if sp.issparse(self.X):
            return int(self.X.nnz)
        return int(np.count_nonzero(self.X))


def _column_scales(X):
    """1/std per column (sample variance, ddof=1); zero-variance columns get 1."""
    if sp.issparse(X):
        n = X.shape[0]
        mean = np.asarray(X.mean(axis=0)).ravel()
        mean_sq = np.asarray(X.multiply(X).mean(axis=0)).ravel()
        var = (mean_sq - mean ** 2) * (n / max(n - 1, 1))
    else:
        var = np.var(X, axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    var = np.where(np.isfinite(var), var, 0.0)
    scales = np.ones_like(var)
    positive = var > 0.0
    scales[positive] = 1.0 / np.sqrt(var[positive])
    return scales


def standardize(dataset):
    """Scale each feature column to unit sample variance (no centering;
    zero-variance columns untouched).  Returns a new Dataset."""
    scales = _column_scales(dataset.X)
    if sp.issparse(dataset.X):
        X = dataset.X.tocsr(copy=True)
        X.data = X.data * scales[X.indices]
    else:
        X = dataset.X * scales
    return Dataset(X=X, y=dataset.y.copy())


def synthetic_shape(P, Q, rows_per_block, cols_per_block, density=1.0):
    """Metadata-only description of a would-be synthetic dataset:
    {n, m, nnz} without materializing anything."""
    if not 0.0 < density <= 1.0:
        raise InvalidDensity(f"density must be in (0, 1], got {density}")
    n = P * rows_per_block
    m = Q * cols_per_block
    nnz = n * m if density == 1.0 else n * int(round(density * m))
    return {"n": n, "m": m, "nnz": nnz}


def generate_synthetic(P, Q, rows_per_block, cols_per_block, density=1.0, seed=0,
                       return_planted=False):
    """Generate and partition a synthetic dataset; returns (blocks, grid).

    With return_planted=True also returns (planted_w, clean_labels) — the
    weight vector behind the labels and the labels before noise flips.
    """
    if not 0.0 < density <= 1.0:
        raise InvalidDensity(f"density must be in (0, 1], got {density}")
    if rows_per_block < 1 or cols_per_block < 1 or P < 1 or Q < 1:
        raise ValueError("all dimensions must be >= 1")
    n = P * rows_per_block
    m = Q * cols_per_block
    planted = rng_stream(seed, "gen", "w").uniform(-1.0, 1.0, size=m)
    if density == 1.0:
        X = rng_stream(seed, "gen", "x").uniform(-1.0, 1.0, size=(n, m))
    else:
        k = int(round(density * m))
        mask_rng = rng_stream(seed, "gen", "mask")
        cols = np.empty((n, k), dtype=np.int64)
        for i in range(n):
            cols[i] = np.sort(mask_rng.choice(m, size=k, replace=False))
        vals = rng_stream(seed, "gen", "x").uniform(-1.0, 1.0, size=n * k)
        indptr = np.arange(0, n * k + 1, k, dtype=np.int64)
        X = sp.csr_matrix((vals, cols.ravel(), indptr), shape=(n, m))
    margins = np.asarray(X @ planted).ravel()
    y_clean = np.where(margins >= 0.0, 1.0, -1.0)
    flips = rng_stream(seed, "gen", "flips").random(n) < FLIP_PROB
    y = np.where(flips, -y_clean, y_clean)
    standardized = standardize(Dataset(X=X, y=y))
    blocks, grid = partition_dataset(standardized, P, Q)
    if return_planted:
        return blocks, grid, planted, y_clean
    return blocks, grid


def _split(dataset, grid):
    blocks = []
    for p in range(grid.P):
        r0, r1 = grid.row_range(p)
        labels = np.array(dataset.y[r0:r1], dtype=np.float64)
        for q in range(grid.Q):
            c0, c1 = grid.col_range(q)
            sub = dataset.X[r0:r1, c0:c1]
            if sp.issparse(sub):
                sub = sub.tocsr()
            else:
                sub = np.ascontiguousarray(sub)
            blocks.append(DataBlock(p=p, q=q, matrix=sub, labels=labels))
    return blocks


def partition_dataset(dataset, P, Q, seed=None):
    """Tile a dataset into a P x Q grid of contiguous blocks.

    With a seed, rows and columns are first shuffled by the permutations
    drawn from (seed, "shuffle", "rows") and (seed, "shuffle", "cols").
    Labels are materialized once per row partition and shared by its blocks.
    """
    X, y = dataset.X, dataset.y
    if seed is not None:
        row_perm = rng_stream(seed, "shuffle", "rows").permutation(dataset.n)
        col_perm = rng_stream(seed, "shuffle", "cols").permutation(dataset.m)
        X = X[row_perm][:, col_perm]
        y = y[row_perm]
    grid = make_grid(dataset.n, dataset.m, P, Q)
    blocks = _split(Dataset(X=X, y=y), grid)
    validate_dataset(blocks, grid)
    return blocks, grid


def assemble(blocks, grid):
    """Rebuild the full Dataset from its blocks (inverse of partitioning)."""
    cells = validate_dataset(blocks, grid)
    y = np.concatenate([cells[(p, 0)].labels for p in range(grid.P)])
    if cells[(0, 0)].is_sparse:
        X = sp.bmat([[cells[(p, q)].matrix for q in range(grid.Q)]
                     for p in range(grid.P)], format="csr")
    else:
        X = np.zeros((grid.n, grid.m))
        for (p, q), blk in cells.items():
            r0, r1 = grid.row_range(p)
            c0, c1 = grid.col_range(q)
            X[r0:r1, c0:c1] = blk.matrix
    return Dataset(X=X, y=y)

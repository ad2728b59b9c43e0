"""Grid construction and the per-iteration sub-block rotation.

Partitions are contiguous, near-equal index ranges fixed for the whole run;
only the assignment of sub-blocks to row partitions changes per iteration,
through a fresh uniformly-random permutation.
"""
from __future__ import annotations

import numpy as np

from .engine import rng_stream
from .model import InvalidPartitionCount, PartitionGrid


def _bounds(total, parts, allow_empty=False):
    """Offsets of a contiguous near-equal split: the first (total mod parts)
    pieces get ceil(total/parts) items, the rest floor(total/parts)."""
    if parts < 1:
        raise InvalidPartitionCount(f"need at least one partition, got {parts}")
    if not allow_empty and parts > total:
        raise InvalidPartitionCount(f"cannot split {total} items into {parts} nonempty parts")
    base, extra = divmod(total, parts)
    sizes = np.full(parts, base, dtype=np.int64)
    sizes[:extra] += 1
    out = np.zeros(parts + 1, dtype=np.int64)
    np.cumsum(sizes, out=out[1:])
    return out


def make_grid(n, m, P, Q):
    """P x Q grid over an n x m dataset, plus P sub-blocks per column block.

    Rows, columns, and sub-blocks all use the same near-equal contiguous
    split.  Sub-blocks may be empty when a column block has fewer than P
    columns; row and column blocks themselves may not.
    """
    if not (1 <= P <= n) or not (1 <= Q <= m):
        raise InvalidPartitionCount(
            f"need 1 <= P <= n and 1 <= Q <= m, got P={P}, Q={Q}, n={n}, m={m}")
    row_bounds = _bounds(n, P)
    col_bounds = _bounds(m, Q)
    sub_bounds = tuple(_bounds(int(col_bounds[q + 1] - col_bounds[q]), P, allow_empty=True)
                       for q in range(Q))
    return PartitionGrid(P=P, Q=Q, row_bounds=row_bounds, col_bounds=col_bounds,
                         sub_bounds=sub_bounds)


def assign_subblocks(grid, t, seed):
    """Sub-block assignment for iteration t: per column block q, a permutation
    perm_q with perm_q[p] = index of the sub-block that row partition p updates.

    Each permutation is drawn by a Fisher-Yates shuffle from the stream keyed
    by (seed, "subblocks", t, q), so any two row partitions always get
    disjoint sub-blocks and reruns reproduce the assignment exactly.
    """
    assignment = []
    for q in range(grid.Q):
        rng = rng_stream(seed, "subblocks", t, q)
        perm = np.arange(grid.P)
        for i in range(grid.P - 1, 0, -1):
            j = int(rng.integers(0, i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        assignment.append(perm)
    return assignment

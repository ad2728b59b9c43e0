"""Binary cache for partitioned datasets.

Layout (all little-endian):
  magic "GOPT1" (5 bytes), flags u8 (bit 0: sparse blocks),
  n u64, m u64, P u32, Q u32, density f64, seed u64;
  per row partition p: labels as int8[n_p];
  per block in (p, q) row-major order:
    dense:  f64[n_p * m_q] row-major;
    sparse: nnz u64, indptr i64[n_p + 1], indices i64[nnz], data f64[nnz].
The grid is rebuilt with make_grid(n, m, P, Q), which is how every cached
dataset was partitioned in the first place.
"""
from __future__ import annotations

import struct

import numpy as np
import scipy.sparse as sp

from .model import DataBlock, validate_dataset
from .partition import make_grid

MAGIC = b"GOPT1"
_HEADER = struct.Struct("<5sBQQIIdQ")


class CacheError(Exception):
    pass


def save_cache(path, blocks, grid, density=1.0, seed=0):
    """Write blocks+grid to `path`; blocks must tile the grid."""
    cells = validate_dataset(blocks, grid)
    sparse = cells[(0, 0)].is_sparse
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 1 if sparse else 0, grid.n, grid.m,
                              grid.P, grid.Q, float(density), seed))
        for p in range(grid.P):
            fh.write(cells[(p, 0)].labels.astype(np.int8).tobytes())
        for p in range(grid.P):
            for q in range(grid.Q):
                mat = cells[(p, q)].matrix
                if sparse:
                    csr = mat.tocsr()
                    fh.write(struct.pack("<Q", csr.nnz))
                    fh.write(csr.indptr.astype(np.int64).tobytes())
                    fh.write(csr.indices.astype(np.int64).tobytes())
                    fh.write(csr.data.astype(np.float64).tobytes())
                else:
                    fh.write(np.ascontiguousarray(mat, dtype=np.float64).tobytes())


def _read_exact(fh, count):
    buf = fh.read(count)
    if len(buf) != count:
        raise CacheError(f"truncated cache file: wanted {count} bytes, got {len(buf)}")
    return buf


def load_cache(path):
    """Read a cache file; returns (blocks, grid, meta) with meta carrying
    the stored density and seed."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER.size)
        magic, flags, n, m, P, Q, density, seed = _HEADER.unpack(header)
        if magic != MAGIC:
            raise CacheError(f"bad magic {magic!r}, expected {MAGIC!r}")
        sparse = bool(flags & 1)
        grid = make_grid(n, m, P, Q)
        labels = []
        for p in range(P):
            r0, r1 = grid.row_range(p)
            raw = np.frombuffer(_read_exact(fh, r1 - r0), dtype=np.int8)
            labels.append(raw.astype(np.float64))
        blocks = []
        for p in range(P):
            r0, r1 = grid.row_range(p)
            n_p = r1 - r0
            for q in range(Q):
                c0, c1 = grid.col_range(q)
                m_q = c1 - c0
                if sparse:
                    (nnz,) = struct.unpack("<Q", _read_exact(fh, 8))
                    indptr = np.frombuffer(_read_exact(fh, 8 * (n_p + 1)), dtype=np.int64)
                    indices = np.frombuffer(_read_exact(fh, 8 * nnz), dtype=np.int64)
                    data = np.frombuffer(_read_exact(fh, 8 * nnz), dtype=np.float64)
                    mat = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()),
                                        shape=(n_p, m_q))
                else:
                    buf = _read_exact(fh, 8 * n_p * m_q)
                    mat = np.frombuffer(buf, dtype=np.float64).reshape(n_p, m_q).copy()
                blocks.append(DataBlock(p=p, q=q, matrix=mat, labels=labels[p]))
        if fh.read(1):
            raise CacheError("trailing bytes after the last block")
    validate_dataset(blocks, grid)
    return blocks, grid, {"density": density, "seed": seed}

"""LIBSVM text format: `label idx:val idx:val ...` with 1-based, strictly
increasing indices per line.  Binary label encodings {-1,+1}, {0,1}, and
{1,2} are accepted and mapped to -1/+1 (1 always maps to +1)."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .data import Dataset


class ParseError(Exception):
    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class NonBinaryLabels(Exception):
    pass


def _map_labels(raw):
    values = set(np.unique(raw).tolist())
    if values <= {-1.0, 1.0}:
        return raw.astype(np.float64)
    if values <= {0.0, 1.0}:
        return np.where(raw == 0.0, -1.0, 1.0)
    if values <= {1.0, 2.0}:
        return np.where(raw == 2.0, -1.0, 1.0)
    raise NonBinaryLabels(f"cannot map label values {sorted(values)} to -1/+1")


def read_libsvm(path):
    """Parse a LIBSVM file into a Dataset with a CSR matrix.

    The feature count is the largest index seen.  Lines that are empty or
    whitespace-only are skipped; anything else malformed raises
    ParseError(line_number, reason)."""
    labels = []
    indptr = [0]
    indices = []
    data = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw_line in enumerate(fh, 1):
            line = raw_line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ParseError(lineno, f"bad label {parts[0]!r}") from None
            prev = 0
            for tok in parts[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(lineno, f"expected index:value, got {tok!r}")
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise ParseError(lineno, f"bad index {idx_s!r}") from None
                try:
                    val = float(val_s)
                except ValueError:
                    raise ParseError(lineno, f"bad value {val_s!r}") from None
                if idx < 1:
                    raise ParseError(lineno, f"index must be >= 1, got {idx}")
                if idx <= prev:
                    raise ParseError(lineno, "non-increasing index")
                prev = idx
                indices.append(idx - 1)
                data.append(val)
            indptr.append(len(indices))
            labels.append(label)
    y = _map_labels(np.asarray(labels, dtype=np.float64))
    n = len(labels)
    m = (max(indices) + 1) if indices else 0
    X = sp.csr_matrix((np.asarray(data, dtype=np.float64),
                       np.asarray(indices, dtype=np.int64),
                       np.asarray(indptr, dtype=np.int64)), shape=(n, m))
    return Dataset(X=X, y=y)


def write_libsvm(path, dataset):
    """Write a Dataset in LIBSVM format (nonzeros only, 1-based indices)."""
    X = dataset.X.tocsr() if sp.issparse(dataset.X) else sp.csr_matrix(dataset.X)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(f"{j + 1}:{v:.17g}"
                             for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            label = int(dataset.y[i])
            fh.write(f"{label} {feats}\n" if feats else f"{label}\n")

"""Shared builders for small random test instances."""
import numpy as np

from ddopt.data import Dataset, partition_dataset
from ddopt.engine import rng_stream
from ddopt.model import ProblemSpec


def random_instance(seed, n, m, P, Q, lam=0.1, loss="hinge", density=1.0):
    """A small partitioned problem with N(0,1)-ish features and +-1 labels."""
    rng = rng_stream(seed, "test-instance")
    X = rng.uniform(-1.0, 1.0, size=(n, m))
    if density < 1.0:
        X[rng.random((n, m)) >= density] = 0.0
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    blocks, grid = partition_dataset(Dataset(X=X, y=y), P, Q)
    spec = ProblemSpec(n=n, m=m, lam=lam, loss=loss)
    return blocks, grid, spec


def random_feasible_alpha(rng, y):
    """A dual point with every coordinate inside its box 0 <= alpha*y <= 1."""
    return rng.random(len(y)) * y

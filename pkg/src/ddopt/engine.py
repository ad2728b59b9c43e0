"""Deterministic simulated cluster: logical workers, barrier rounds, tree reductions.

Workers are in-process closures.  All floating-point reductions combine in a
fixed left-to-right tree, so results never depend on the physical thread
count; communication is metered instead of timed.
"""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np


class EngineError(Exception):
    pass


class TaskPanic(EngineError):
    """A worker task raised.  Carries the smallest failing worker id."""

    def __init__(self, worker_id, cause=None):
        super().__init__(f"task failed on worker {worker_id}: {cause!r}")
        self.worker_id = worker_id
        self.cause = cause


class EmptyGroup(EngineError):
    pass


def rng_stream(seed, *tags):
    """Independent, platform-stable random stream for (seed, *tags).

    The seed and tags are hashed into a Philox key, so distinct tag tuples
    give independent counter-based streams and the same tuple always
    reproduces the same sequence, on any platform.
    """
    text = "|".join(str(part) for part in (seed, *tags))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def default_threads():
    """Physical parallelism degree: DDOPT_THREADS env var, else cpu count."""
    env = os.environ.get("DDOPT_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def tree_reduce(values, combine, arity=2):
    """Combine `values` through a fixed left-to-right tree of the given arity.

    `combine` must be associative; commutativity is not assumed.  A single
    value is returned unchanged.
    """
    if len(values) == 0:
        raise EmptyGroup("cannot reduce an empty group")
    if arity < 2:
        raise ValueError("arity must be >= 2")
    level = list(values)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), arity):
            chunk = level[i:i + arity]
            acc = chunk[0]
            for val in chunk[1:]:
                acc = combine(acc, val)
            nxt.append(acc)
        level = nxt
    return level[0]


def _payload_size(value):
    if np.isscalar(value):
        return 1
    return int(np.size(value))


class ClusterSim:
    """K logical workers with barrier-synchronized rounds and metered reductions.

    Each of the K = P*Q logical workers owns one data block (the owning solver
    binds blocks to worker ids via closures).  `threads` caps how many tasks
    run concurrently and never affects results: task results are collected in
    worker order and reductions use `tree_reduce`'s fixed ordering.

    Counters:
      reduce_rounds         barrier-synchronized reduction phases entered
      combine_calls         pairwise combines performed inside reductions
      scalars_communicated  total scalars moved across reduction edges
    """

    def __init__(self, n_workers, threads=None, reduce_arity=2):
        if n_workers < 1:
            raise ValueError("need at least one worker")
        if reduce_arity < 2:
            raise ValueError("reduce_arity must be >= 2")
        self.n_workers = n_workers
        self.threads = threads if threads is not None else default_threads()
        self.reduce_arity = reduce_arity
        self.reduce_rounds = 0
        self.combine_calls = 0
        self.scalars_communicated = 0

    @contextmanager
    def phase(self):
        """One reduction phase (a cluster-wide barrier); counted once."""
        self.reduce_rounds += 1
        yield self

    def run_round(self, tasks):
        """Run exactly one closure per worker; results in worker order.

        If any task raises, the round aborts with TaskPanic for the smallest
        failing worker id (deterministic regardless of scheduling).
        """
        if len(tasks) != self.n_workers:
            raise ValueError(f"expected {self.n_workers} tasks, got {len(tasks)}")
        results = [None] * len(tasks)
        failures = {}
        if self.threads <= 1 or len(tasks) == 1:
            for wid, task in enumerate(tasks):
                try:
                    results[wid] = task()
                except Exception as exc:
                    failures[wid] = exc
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                futures = [pool.submit(task) for task in tasks]
                for wid, fut in enumerate(futures):
                    try:
                        results[wid] = fut.result()
                    except Exception as exc:
                        failures[wid] = exc
        if failures:
            wid = min(failures)
            raise TaskPanic(wid, failures[wid]) from failures[wid]
        return results

    def tree_aggregate(self, group, combine, arity=None, payload=None):
        """tree_reduce plus accounting: one combine call and one payload-sized
        transfer per value folded away ((len(group)-1) of each)."""
        if len(group) == 0:
            raise EmptyGroup("cannot reduce an empty group")

        def counted(a, b):
            self.combine_calls += 1
            self.scalars_communicated += payload if payload is not None else _payload_size(b)
            return combine(a, b)

        return tree_reduce(group, counted, arity or self.reduce_arity)

    def account_transfer(self, scalars):
        """Meter scalars moved outside tree_aggregate (e.g. a gather)."""
        self.scalars_communicated += int(scalars)

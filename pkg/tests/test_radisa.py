import math

import numpy as np
import pytest
import scipy.sparse as sp

from ddopt.engine import ClusterSim, rng_stream
from ddopt.losses import loss_derivatives, primal_objective
from ddopt.model import (DataBlock, DimensionMismatch, PrimalVector,
                         ProblemSpec)
from ddopt.partition import assign_subblocks, make_grid
from ddopt.radisa import (MissingSlice, RadisaConfig, full_gradient,
                          merge_solutions, run_radisa, step_size, svrg_inner)

from helpers import random_instance


def test_step_size_schedule():
    gamma = 0.4
    etas = [step_size(gamma, t) for t in range(1, 8)]
    assert etas[0] == gamma                      # eta_1 = gamma exactly
    assert etas[1] == pytest.approx(gamma / 2)   # 1 + sqrt(1)
    assert all(a > b for a, b in zip(etas, etas[1:]))  # strictly decreasing


def test_full_gradient_at_zero_hinge():
    blocks, grid, spec = random_instance(1, n=20, m=8, P=2, Q=2, lam=0.7)
    mu = full_gradient(PrimalVector.zeros(grid), blocks, grid, spec)
    from ddopt.data import assemble
    dataset = assemble(blocks, grid)
    # every margin is 0 < 1: derivative -y_i, so mu = -(1/n) sum y_i x_i
    expected = -(dataset.X.T @ dataset.y) / spec.n
    assert np.allclose(mu.concat(), expected, rtol=1e-12, atol=1e-15)


def test_full_gradient_flat_region_is_regularizer_only():
    X = np.eye(3)
    y = np.ones(3)
    blocks = [DataBlock(p=0, q=0, matrix=X, labels=y)]
    grid = make_grid(3, 3, 1, 1)
    spec = ProblemSpec(n=3, m=3, lam=0.25, loss="hinge")
    w = PrimalVector([np.full(3, 5.0)])  # all margins 5 > 1
    mu = full_gradient(w, blocks, grid, spec)
    assert np.array_equal(mu.concat(), 0.25 * np.full(3, 5.0))


def test_full_gradient_matches_finite_differences_logistic():
    for seed in range(5):
        blocks, grid, spec = random_instance(seed, n=15, m=6, P=3, Q=2,
                                             lam=0.4, loss="logistic")
        w_full = rng_stream(seed, "fgw").uniform(-1, 1, grid.m)
        w = PrimalVector.from_array(w_full, grid)
        mu = full_gradient(w, blocks, grid, spec).concat()
        h = 1e-6
        for k in range(grid.m):
            e = np.zeros(grid.m)
            e[k] = h
            up = primal_objective(PrimalVector.from_array(w_full + e, grid),
                                  blocks, grid, spec)
            dn = primal_objective(PrimalVector.from_array(w_full - e, grid),
                                  blocks, grid, spec)
            fd = (up - dn) / (2 * h)
            assert abs(mu[k] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_full_gradient_returns_anchor_margins():
    blocks, grid, spec = random_instance(2, n=18, m=7, P=3, Q=2, lam=0.3)
    from ddopt.data import assemble
    dataset = assemble(blocks, grid)
    w_full = rng_stream(2, "wm").uniform(-1, 1, grid.m)
    w = PrimalVector.from_array(w_full, grid)
    _, margins = full_gradient(w, blocks, grid, spec, return_margins=True)
    stacked = np.concatenate(margins)
    assert np.allclose(stacked, dataset.X @ w_full, rtol=1e-12, atol=1e-15)


def test_full_gradient_metered_matches_unmetered():
    blocks, grid, spec = random_instance(3, n=12, m=6, P=2, Q=3, lam=0.5)
    w = PrimalVector.from_array(rng_stream(3, "wv").uniform(-1, 1, grid.m),
                                grid)
    plain = full_gradient(w, blocks, grid, spec)
    sim = ClusterSim(6, threads=1)
    metered = full_gradient(w, blocks, grid, spec, sim=sim)
    assert np.array_equal(plain.concat(), metered.concat())
    assert sim.combine_calls > 0 and sim.scalars_communicated > 0


def _inner_setup(seed=0, n=10, m=6, lam=0.5, loss="hinge"):
    rng = rng_stream(seed, "inner")
    X = rng.uniform(-1, 1, size=(n, m))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    block = DataBlock(p=0, q=0, matrix=X, labels=y)
    spec = ProblemSpec(n=n, m=m, lam=lam, loss=loss)
    return block, spec


def test_svrg_inner_first_direction_from_anchor_is_mu_slice():
    # starting at the anchor, the correction cancels and the only movement is
    # -eta * mu_slice, bit for bit
    for seed in range(6):
        block, spec = _inner_setup(seed=seed)
        anchor = rng_stream(seed, "anchor").uniform(-1, 1, block.cols)
        mu = rng_stream(seed, "mu").uniform(-1, 1, block.cols)
        for lo, hi in ((0, block.cols), (1, 4), (2, 2)):
            eta = 0.3
            out = svrg_inner(anchor[lo:hi].copy(), anchor, mu[lo:hi], block,
                             spec, L=1, eta_t=eta, rng=rng_stream(seed, "r"),
                             lo=lo, hi=hi)
            expected = anchor[lo:hi] - eta * mu[lo:hi]
            assert np.array_equal(out, expected)


def test_svrg_inner_one_step_hand_computed():
    block, spec = _inner_setup(seed=9, n=4, m=3)
    anchor = np.array([0.2, -0.1, 0.4])
    start = np.array([0.3, 0.0, 0.1])
    mu = np.array([0.05, -0.02, 0.01])
    rng = rng_stream(42, "step")
    j = int(rng_stream(42, "step").integers(0, 4, size=1)[0])
    out = svrg_inner(start.copy(), anchor, mu, block, spec, L=1, eta_t=0.25,
                     rng=rng)
    x = block.matrix[j]
    base = block.matrix @ anchor
    d_anchor = loss_derivatives(base, block.labels, spec.loss)[j]
    z_live = base[j] + np.dot(x, start - anchor)
    d_live = float(loss_derivatives(z_live, block.labels[j], spec.loss))
    step = (d_live - d_anchor) * x + spec.lam * (start - anchor) + mu
    assert np.allclose(out, start - 0.25 * step, rtol=1e-14, atol=0)


def test_svrg_inner_uses_supplied_anchor_margins():
    # anchor margins over all columns make the correction exact even when the
    # block only sees a subset of the features (logistic: any margin shift
    # changes the derivative, so the offset must show up in the trajectory)
    block, spec = _inner_setup(seed=11, n=6, m=4, loss="logistic")
    anchor = rng_stream(11, "a").uniform(-1, 1, 4)
    mu = rng_stream(11, "m").uniform(-1, 1, 4)
    margins = block.matrix @ anchor + 0.37  # pretend other columns contribute
    out_with = svrg_inner(anchor.copy(), anchor, mu, block, spec, L=3,
                          eta_t=0.1, rng=rng_stream(11, "r"),
                          anchor_margins=margins)
    out_without = svrg_inner(anchor.copy(), anchor, mu, block, spec, L=3,
                             eta_t=0.1, rng=rng_stream(11, "r"))
    assert not np.array_equal(out_with, out_without)
    with pytest.raises(DimensionMismatch):
        svrg_inner(anchor.copy(), anchor, mu, block, spec, L=1, eta_t=0.1,
                   rng=rng_stream(11, "r"), anchor_margins=margins[:3])


def test_svrg_inner_empty_slice_and_zero_steps():
    block, spec = _inner_setup()
    anchor = np.zeros(block.cols)
    out = svrg_inner(np.zeros(0), anchor, np.zeros(0), block, spec, L=5,
                     eta_t=0.1, rng=rng_stream(0, "r"), lo=3, hi=3)
    assert out.shape == (0,)
    start = np.ones(block.cols)
    out = svrg_inner(start, anchor, np.zeros(block.cols), block, spec, L=0,
                     eta_t=0.1, rng=rng_stream(0, "r"))
    assert np.array_equal(out, start)
    assert out is not start  # private copy


def test_svrg_inner_shape_errors():
    block, spec = _inner_setup()
    with pytest.raises(DimensionMismatch):
        svrg_inner(np.zeros(2), np.zeros(block.cols), np.zeros(2), block,
                   spec, L=1, eta_t=0.1, rng=rng_stream(0, "r"), lo=0, hi=3)


def test_svrg_inner_sparse_matches_dense():
    block, spec = _inner_setup(seed=13, n=12, m=8)
    X = block.matrix.copy()
    X[np.abs(X) < 0.4] = 0.0
    dense = DataBlock(p=0, q=0, matrix=X, labels=block.labels)
    sparse = DataBlock(p=0, q=0, matrix=sp.csr_matrix(X), labels=block.labels)
    anchor = rng_stream(13, "a").uniform(-1, 1, 8)
    mu = rng_stream(13, "m").uniform(-1, 1, 8)
    for lo, hi in ((0, 8), (2, 6)):
        a = svrg_inner(anchor[lo:hi] + 0.1, anchor, mu[lo:hi], dense, spec,
                       L=6, eta_t=0.2, rng=rng_stream(13, "r"), lo=lo, hi=hi)
        b = svrg_inner(anchor[lo:hi] + 0.1, anchor, mu[lo:hi], sparse, spec,
                       L=6, eta_t=0.2, rng=rng_stream(13, "r"), lo=lo, hi=hi)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-16)


def test_variance_reduction_shrinks_direction_spread():
    # near the anchor the corrected direction concentrates around the full
    # gradient; the plain stochastic gradient does not
    block, spec = _inner_setup(seed=17, n=40, m=5, loss="logistic")
    grid = make_grid(40, 5, 1, 1)
    anchor_vec = rng_stream(17, "av").uniform(-0.5, 0.5, 5)
    anchor = PrimalVector([anchor_vec.copy()])
    mu = full_gradient(anchor, [block], grid, spec).blocks[0]
    eta = 0.01
    vr_dirs = []
    sg_dirs = []
    for k in range(300):
        out = svrg_inner(anchor_vec.copy(), anchor_vec, mu, block, spec, L=1,
                         eta_t=eta, rng=rng_stream(17, "mc", k))
        vr_dirs.append((anchor_vec - out) / eta)
        j = int(rng_stream(17, "mc", k).integers(0, 40, size=1)[0])
        z = float(block.matrix[j] @ anchor_vec)
        d = float(loss_derivatives(z, block.labels[j], spec.loss))
        sg_dirs.append(d * block.matrix[j] + spec.lam * anchor_vec)
    vr_var = np.mean(np.var(np.array(vr_dirs), axis=0))
    sg_var = np.mean(np.var(np.array(sg_dirs), axis=0))
    assert vr_var < 1e-28          # exactly mu at the anchor, modulo rounding
    assert sg_var > 1e-4


def test_merge_solutions_disjoint_concatenates_in_subblock_order():
    grid = make_grid(8, 6, 2, 2)  # column blocks of width 3, sub-blocks 2+1
    slices = {(0, 0): np.array([1.0, 2.0]), (0, 1): np.array([3.0]),
              (1, 0): np.array([4.0, 5.0]), (1, 1): np.array([6.0])}
    w = merge_solutions(slices, grid, "disjoint")
    assert w.blocks[0].tolist() == [1.0, 2.0, 3.0]
    assert w.blocks[1].tolist() == [4.0, 5.0, 6.0]


def test_merge_solutions_avg_divides_by_p():
    grid = make_grid(8, 4, 2, 2)
    slices = {(0, 0): np.array([2.0, 4.0]), (0, 1): np.array([4.0, 0.0]),
              (1, 0): np.array([1.0, 1.0]), (1, 1): np.array([3.0, 5.0])}
    w = merge_solutions(slices, grid, "avg")
    assert w.blocks[0].tolist() == [3.0, 2.0]
    assert w.blocks[1].tolist() == [2.0, 3.0]


def test_merge_solutions_errors():
    grid = make_grid(8, 6, 2, 2)
    good = {(0, 0): np.zeros(2), (0, 1): np.zeros(1),
            (1, 0): np.zeros(2), (1, 1): np.zeros(1)}
    bad = dict(good)
    del bad[(1, 1)]
    with pytest.raises(MissingSlice) as exc:
        merge_solutions(bad, grid, "disjoint")
    assert (exc.value.q, exc.value.k) == (1, 1)
    wrong = dict(good)
    wrong[(0, 0)] = np.zeros(3)
    with pytest.raises(DimensionMismatch):
        merge_solutions(wrong, grid, "disjoint")
    with pytest.raises(ValueError):
        merge_solutions(good, grid, "median")


def test_run_radisa_history_counters_and_decrease():
    blocks, grid, spec = random_instance(21, n=40, m=10, P=2, Q=2, lam=1.0)
    cfg = RadisaConfig(batch_size=20, gamma=0.01, outer_iters=8, seed=0)
    w, hist = run_radisa(blocks, grid, spec, cfg, threads=1)
    assert len(hist) == 8
    assert hist.final.primal_value < hist[0].primal_value + 1e-12
    assert [rec.reduce_ops for rec in hist] == [2 * t for t in range(1, 9)]
    assert w.concat().shape == (10,)


def test_run_radisa_gamma_to_zero_keeps_objective_at_start():
    # hinge at w=0 has F=1; a vanishing step size must stay there
    blocks, grid, spec = random_instance(22, n=30, m=8, P=2, Q=2, lam=0.5)
    cfg = RadisaConfig(batch_size=10, gamma=1e-12, outer_iters=3, seed=1)
    _, hist = run_radisa(blocks, grid, spec, cfg, threads=1)
    assert hist.final.primal_value == pytest.approx(1.0, abs=1e-9)


def test_run_radisa_avg_variant_runs_and_decreases():
    blocks, grid, spec = random_instance(23, n=40, m=10, P=2, Q=2, lam=1.0)
    cfg = RadisaConfig(batch_size=20, gamma=0.01, outer_iters=8, seed=2,
                       variant="avg")
    _, hist = run_radisa(blocks, grid, spec, cfg, threads=1)
    assert hist.final.primal_value < hist[0].primal_value + 1e-12


def test_run_radisa_disjoint_writes_are_isolated():
    # coordinates outside a block's assigned sub-block must come back equal to
    # the merge of the *other* blocks' work, never double-written: check that
    # each sub-slice of the merged iterate equals the piece its assigned
    # worker produced
    blocks, grid, spec = random_instance(24, n=24, m=12, P=2, Q=2, lam=0.8)
    cfg = RadisaConfig(batch_size=6, gamma=0.05, outer_iters=1, seed=3)
    cells = {(b.p, b.q): b for b in blocks}
    w1, _ = run_radisa(blocks, grid, spec, cfg, threads=1)
    # replay the single iteration by hand
    from ddopt.radisa import full_gradient as fg
    anchor = PrimalVector.zeros(grid)
    mu, margins = fg(anchor, cells, grid, spec, return_margins=True)
    assignment = assign_subblocks(grid, 1, cfg.seed)
    eta = step_size(cfg.gamma, 1)
    for q in range(grid.Q):
        for p in range(grid.P):
            k = int(assignment[q][p])
            lo, hi = grid.sub_range(q, k)
            piece = svrg_inner(anchor.blocks[q][lo:hi].copy(),
                               anchor.blocks[q], mu.blocks[q][lo:hi],
                               cells[(p, q)], spec, cfg.batch_size, eta,
                               rng_stream(cfg.seed, "radisa", 1, p, q),
                               lo, hi, anchor_margins=margins[p])
            assert np.array_equal(w1.blocks[q][lo:hi], piece)


def test_run_radisa_serial_reduction_matches_svrg_oracle_bitwise():
    # P=Q=1 is plain SVRG: replay the exact update rule independently
    for seed in range(3):
        blocks, grid, spec = random_instance(seed + 30, n=25, m=7, P=1, Q=1,
                                             lam=0.6, loss="logistic")
        block = blocks[0]
        cfg = RadisaConfig(batch_size=9, gamma=0.1, outer_iters=4, seed=seed)
        iterates = []
        run_radisa(blocks, grid, spec, cfg, threads=1,
                   on_iteration=lambda t, w: iterates.append(w.concat()))

        X = block.matrix
        y = block.labels
        n, m = X.shape
        w_tilde = np.zeros(m)
        for t in range(1, 5):
            anchor = w_tilde.copy()
            base = np.asarray(X @ anchor, dtype=np.float64).ravel()
            fprime = loss_derivatives(base, y, spec.loss)
            mu = np.asarray(X.T @ fprime).ravel() / spec.n + spec.lam * anchor
            eta = cfg.gamma / (1.0 + math.sqrt(t - 1.0))
            d_base = np.asarray(loss_derivatives(base, y, spec.loss),
                                dtype=np.float64)
            rng = rng_stream(cfg.seed, "radisa", t, 0, 0)
            idx = rng.integers(0, n, size=cfg.batch_size)
            w = anchor.copy()
            for raw in idx:
                j = int(raw)
                drift = w - anchor
                xs = X[j, 0:m]
                z_live = float(base[j]) + float(np.dot(xs, drift))
                d_live = float(loss_derivatives(z_live, y[j], spec.loss))
                step = (d_live - d_base[j]) * xs + spec.lam * drift + mu
                w = w - eta * step
            w_tilde = np.concatenate([w])
            assert np.array_equal(iterates[t - 1], w_tilde), (seed, t)


def test_run_radisa_gradient_lag_skips_reduction_phases():
    blocks, grid, spec = random_instance(25, n=20, m=8, P=2, Q=1, lam=0.5)
    lagged = RadisaConfig(batch_size=5, gamma=0.05, outer_iters=6, seed=4,
                          gradient_lag=3)
    fresh = RadisaConfig(batch_size=5, gamma=0.05, outer_iters=6, seed=4)
    _, hist_lag = run_radisa(blocks, grid, spec, lagged, threads=1)
    _, hist_fresh = run_radisa(blocks, grid, spec, fresh, threads=1)
    # 6 iterations: fresh recomputes 6 anchors, lagged only at t=1 and t=4
    assert hist_fresh.final.reduce_ops == 12
    assert hist_lag.final.reduce_ops == 6 + 2


def test_run_radisa_scale_gamma_with_p():
    blocks, grid, spec = random_instance(26, n=20, m=8, P=2, Q=1, lam=0.5)
    base = RadisaConfig(batch_size=5, gamma=0.0078125, outer_iters=2, seed=5)
    scaled = RadisaConfig(batch_size=5, gamma=0.00390625, outer_iters=2,
                          seed=5, scale_gamma_with_p=True)
    _, h1 = run_radisa(blocks, grid, spec, base, threads=1)
    _, h2 = run_radisa(blocks, grid, spec, scaled, threads=1)
    # gamma * P = 2^-8 * 2 is exactly the unscaled 2^-7: identical runs
    assert h1 == h2


def test_radisa_config_validation():
    with pytest.raises(ValueError):
        RadisaConfig(batch_size=0)
    with pytest.raises(ValueError):
        RadisaConfig(batch_size=1, gamma=0.0)
    with pytest.raises(ValueError):
        RadisaConfig(batch_size=1, variant="mix")
    with pytest.raises(ValueError):
        RadisaConfig(batch_size=1, gradient_lag=0)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakam.critical_value import (critical_value_by_drift, critical_weak_kam, cross_base_differences, drift_bounds,
                                   karp_min_mean,
                                   mane_critical_value, mather_measure, mather_set, path_measure,
                                   peierls_barrier, period_costs)
from weakam.discretization import Grid, build_graph, shift_index
from weakam.errors import NotCritical
from weakam.model import (ConstantDamping, FourierDamping, Mechanical, ModelSpec, TrigPotential,
                          cosine_potential, zero_potential)
from weakam.weak_kam import backward_calibrated_curve, verify_solution


def model(pot=None, c=0.0, damping=None):
    return ModelSpec(Mechanical(pot or zero_potential(), c), damping or ConstantDamping(0.0))


@pytest.fixture(scope="module")
def free_half():
    return build_graph(model(c=0.5), Grid(64, 32, 2.0))


@pytest.fixture(scope="module")
def pendulum_zero_mean():
    return build_graph(model(cosine_potential(1.0), 0.0, FourierDamping(0.0, (), (0.3,))), Grid(64, 32, 4.0))


def _all_simple_cycle_min_mean(W):
    n = W.shape[0]
    best = math.inf
    for r in range(1, n + 1):
        for perm in itertools.permutations(range(n), r):
            if perm[0] != min(perm):
                continue
            cyc = list(perm) + [perm[0]]
            cost = sum(W[a, b] for a, b in zip(cyc[:-1], cyc[1:]))
            if np.isfinite(cost):
                best = min(best, cost / r)
    return best


def test_karp_hand_graph():
    inf = math.inf
    W = np.array([[0.0, 1.0, inf], [-3.0, inf, 2.0], [inf, 0.5, 1.0]])
    lam, cyc = karp_min_mean(W)
    assert lam == pytest.approx(_all_simple_cycle_min_mean(W), abs=1e-14)
    assert lam == pytest.approx(-1.0)
    cost = sum(W[a, b] for a, b in zip(cyc[:-1], cyc[1:])) / (len(cyc) - 1)
    assert cost == pytest.approx(lam)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.floats(-5, 5), min_size=n * n, max_size=n * n),
    st.lists(st.booleans(), min_size=n * n, max_size=n * n))))
def test_karp_matches_enumeration(data):
    n, vals, keep = data
    W = np.where(np.array(keep).reshape(n, n), np.array(vals).reshape(n, n), np.inf)
    np.fill_diagonal(W, np.where(np.isfinite(np.diag(W)), np.diag(W), 10.0))  # every vertex on some cycle
    lam, cyc = karp_min_mean(W)
    assert lam == pytest.approx(_all_simple_cycle_min_mean(W), abs=1e-12)
    cost = sum(W[a, b] for a, b in zip(cyc[:-1], cyc[1:])) / (len(cyc) - 1)
    assert cost == pytest.approx(lam, abs=1e-12)


def test_free_rest_cycle_zero_mean_damping():
    g = build_graph(model(damping=FourierDamping(0.0, (), (0.5,))), Grid(16, 8, 2.0))
    c_H, w = mane_critical_value(g)
    assert c_H == pytest.approx(0.0, abs=1e-14)
    assert np.all(w.edges[:, 2] == 0) and w.rotation == 0.0
    mu = mather_measure(w)
    assert mu.action() == pytest.approx(0.0, abs=1e-14)


def test_free_particle_critical_value(free_half):
    c_H, w = mane_critical_value(free_half)
    assert c_H == pytest.approx(0.125, abs=1e-12)
    assert w.rotation == pytest.approx(0.5)
    assert w.periods == 2 and w.total_winding() == 1
    assert w.mean == pytest.approx(w.recomputed_mean(), abs=1e-10)
    assert w.mean == pytest.approx(-c_H, abs=1e-12)


def test_drift_bisection(free_half):
    assert critical_value_by_drift(free_half, tol=1e-7) == pytest.approx(0.125, abs=1e-7)
    g = build_graph(model(), Grid(16, 8, 2.0))
    assert critical_value_by_drift(g, tol=1e-8) == pytest.approx(0.0, abs=1e-8)
    lo, hi = drift_bounds(free_half, 0.0)
    assert lo <= -0.125 * free_half.ell + 1e-12 and hi >= -0.125 * free_half.ell - 1e-12


def test_drift_and_karp_agree_on_random_potentials():
    rng = np.random.default_rng(5)
    for _ in range(5):
        terms = tuple((int(rng.integers(1, 3)), int(rng.integers(-1, 2)), *rng.normal(scale=0.5, size=2))
                      for _ in range(2))
        m = model(TrigPotential(0.0, terms), float(rng.uniform(-1, 1)),
                  FourierDamping(0.0, (float(rng.uniform(-0.4, 0.4)),), (float(rng.uniform(-0.4, 0.4)),)))
        g = build_graph(m, Grid(32, 16, 3.0))
        c_karp, _ = mane_critical_value(g)
        tol = 1e-7
        assert abs(critical_value_by_drift(g, tol=tol) - c_karp) <= tol + 1e-9


def test_not_critical_message():
    g = build_graph(model(damping=ConstantDamping(0.2)), Grid(16, 8, 2.0))
    for fn in (mane_critical_value, critical_value_by_drift, mather_set):
        with pytest.raises(NotCritical, match=r"requires \[f\]=0"):
            fn(g)
    with pytest.raises(NotCritical):
        peierls_barrier(g, 0.0, 0, 0)


def test_mather_measure_closed_and_calibrated(pendulum_zero_mean):
    g = pendulum_zero_mean
    c_H, w = mane_critical_value(g)
    mu = mather_measure(w)
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert abs(mu.divergence(rng.normal(size=(64, 32)))) <= 1e-10
    assert np.allclose(mu.time_marginal(), 1 / 32, atol=1e-12)
    assert mu.weights.sum() == pytest.approx(1.0)
    assert mu.action() == pytest.approx(-c_H, abs=1e-8)
    # the pendulum with L = v^2/2 - V rests at the top of the well, c(H) = max V
    assert c_H == pytest.approx(2.0, abs=1e-12)
    assert set(w.edges[:, 0]) == {32}


def _random_closed_path(g, periods, rng):
    nx_, nt = g.grid.nx, g.grid.nt
    S = g.grid.max_shift
    while True:
        start = int(rng.integers(nx_))
        shifts = rng.integers(-S, S + 1, size=periods * nt)
        need = -int(shifts[:-1].sum()) % nx_
        for last in (need, need - nx_):
            if abs(last) <= S:
                shifts[-1] = last
                lift = start + np.concatenate([[0], np.cumsum(shifts[:-1])])
                j = np.arange(periods * nt) % nt
                return np.column_stack([lift % nx_, j, shifts])


def test_critical_level_nonnegativity(pendulum_zero_mean):
    g = pendulum_zero_mean
    c_H, _ = mane_critical_value(g)
    rng = np.random.default_rng(1)
    for _ in range(100):
        edges = _random_closed_path(g, int(rng.integers(1, 4)), rng)
        w_L = g.w_L[edges[:, 1], edges[:, 0], [shift_index(s) for s in edges[:, 2]]]
        assert np.sum(w_L + c_H * g.w_T[edges[:, 1]]) >= -1e-9
        mu = path_measure(g, edges)
        assert abs(mu.divergence(rng.normal(size=(64, 32)))) <= 1e-10
        assert mu.action() + c_H >= -1e-9


def test_mather_set_enumerates_all_optimal_cycles(free_half, pendulum_zero_mean):
    ms = mather_set(free_half)
    assert not ms.truncated
    assert ms.c_H == pytest.approx(0.125)
    # the velocity-1/2 cycle can start at any even or odd node; every node is covered
    assert ms.node_mask.all()
    for c in ms.cycles:
        assert c.mean == pytest.approx(-0.125, abs=1e-12)
    ms = mather_set(pendulum_zero_mean)
    assert len(ms.cycles) == 1
    assert set(np.flatnonzero(ms.node_mask.any(axis=1))) == {32}


def test_period_costs_diagonal_free():
    g = build_graph(model(), Grid(16, 8, 2.0))
    pc = period_costs(g)
    assert np.allclose(np.diag(pc.W), 0.0)
    assert np.all(pc.W >= -1e-15)


def test_barrier_free_particle():
    g = build_graph(model(), Grid(16, 8, 2.0))
    bar = peierls_barrier(g, 0.0, 0, 0)
    quantum = g.grid.dx ** 2 * g.grid.nt / 2
    assert np.all(bar.values >= -1e-14)
    assert np.max(bar.values) <= (g.grid.nx // 2) * quantum + 1e-12
    assert bar.values[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert bar.gap <= 1e-12
    u = critical_weak_kam(g, 0.0, 0, 0)
    assert np.max(np.abs(u.values)) <= (g.grid.nx // 2) * quantum + 1e-12


def test_barrier_self_value_on_witness(pendulum_zero_mean):
    g = pendulum_zero_mean
    c_H, w = mane_critical_value(g)
    for i, j, _ in w.edges[::7]:
        bar = peierls_barrier(g, c_H, int(i), int(j))
        assert abs(bar.values[i, j]) <= 1e-6
        assert bar.gap <= 1e-6
        assert np.all(np.isfinite(bar.values))


def test_barrier_matches_enumeration_on_tiny_grid():
    m = model(TrigPotential(0.1, ((1, 1, 0.4, -0.3),)), 0.2, FourierDamping(0.0, (), (0.5,)))
    g = build_graph(m, Grid(8, 4, 0.5, strict=False))
    assert list(g.shifts) == [0, -1, 1]
    c_H, _ = mane_critical_value(g)
    z, s = 3, 0
    bar = peierls_barrier(g, c_H, z, s, n_min=3, n_max=3)
    steps = 3 * 4  # arrival on slice 0 after exactly three periods
    seqs = np.array(list(itertools.product([-1, 0, 1], repeat=steps)))
    lift = z + np.concatenate([np.zeros((len(seqs), 1), int), np.cumsum(seqs, axis=1)], axis=1)
    cost = np.zeros(len(seqs))
    for m_ in range(steps):
        i = lift[:, m_] % 8
        cost += g.w_L[m_ % 4, i, np.vectorize(shift_index)(seqs[:, m_])]
        cost += c_H * g.ell / 4
    end = lift[:, -1] % 8
    for k in range(8):
        assert bar.values[k, 0] == pytest.approx(cost[end == k].min(), abs=1e-12)


def test_critical_solution_dominated_and_attracting(pendulum_zero_mean):
    g = pendulum_zero_mean
    c_H, w = mane_critical_value(g)
    u = critical_weak_kam(g, c_H, int(w.edges[0, 0]), int(w.edges[0, 1]))
    rep = verify_solution(u, g, n_random_curves=1000)
    assert rep.max_violation <= 1e-6
    rng = np.random.default_rng(2)
    for _ in range(5):
        curve = backward_calibrated_curve(u, g, int(rng.integers(64)), int(rng.integers(32)), 64)
        assert abs(int(curve.nodes[-1, 0]) - 32) <= 1


def test_cross_base_differences(pendulum_zero_mean):
    g = pendulum_zero_mean
    c_H, w = mane_critical_value(g)
    bases = [(int(i), int(j)) for i, j, _ in w.edges[::11]]
    d = cross_base_differences(g, c_H, bases)
    assert d.shape == (len(bases), len(bases))
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)
    # bases on one calibrated cycle give the same critical solution
    assert np.max(d) <= 1e-10

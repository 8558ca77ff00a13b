import math

import numpy as np
import pytest

from weakam.critical_value import critical_weak_kam, mane_critical_value, mather_measure
from weakam.discount_limit import (DampingFamily, converge_study, family_profile, subsolution_constraint,
                                   subsolution_lower_bound)
from weakam.discretization import Grid, build_graph
from weakam.errors import ModelMismatch, NonPositiveDelta, NotSubsolution, ParamOutOfRange
from weakam.model import (ConstantDamping, FourierDamping, Mechanical, ModelSpec, cosine_potential,
                          zero_potential)
from weakam.weak_kam import ValueField

SIN = FourierDamping(0.0, (), (1.0,))
FAM = DampingFamily(FourierDamping(0.0, (), (0.3,)), ConstantDamping(1.0))


def test_family_profile():
    fam = DampingFamily(SIN, ConstantDamping(1.0))
    prof = family_profile(fam, 0.1)
    assert prof.mean == pytest.approx(0.1, abs=1e-14)
    assert float(prof.F(0.5)) == pytest.approx(1 / math.pi + 0.05, abs=1e-12)
    for bad in (0.0, -0.1):
        with pytest.raises(NonPositiveDelta):
            family_profile(fam, bad)


def test_family_validation():
    with pytest.raises(ParamOutOfRange):
        DampingFamily(ConstantDamping(0.1), ConstantDamping(1.0))
    with pytest.raises(ParamOutOfRange):
        DampingFamily(SIN, FourierDamping(0.5, (1.0,), ()))
    with pytest.raises(NonPositiveDelta):
        DampingFamily(SIN, ConstantDamping(1.0), (0.2, 0.0))
    with pytest.raises(ParamOutOfRange):
        DampingFamily(SIN, ConstantDamping(1.0), (0.1, 0.2))


@pytest.mark.parametrize("c", [0.0, 0.5])
def test_free_particle_limit_is_zero(c):
    # at alpha = c^2 / 2 the constant fixed point (alpha - c^2/2) / [f_delta] vanishes
    m = ModelSpec(Mechanical(zero_potential(), c), ConstantDamping(0.0))
    rep = converge_study(m, DampingFamily(SIN, ConstantDamping(1.0)), Grid(64, 32, 2.0))
    assert rep.c_H == pytest.approx(c * c / 2, abs=1e-12)
    assert max(rep.sup_norms) <= 1e-9
    assert max(rep.distances) <= 1e-9
    assert rep.converged


@pytest.fixture(scope="module")
def pendulum_study():
    m = ModelSpec(Mechanical(cosine_potential(1.0), 0.0), ConstantDamping(0.0))
    return converge_study(m, FAM, Grid(128, 64, 4.0))


def test_pendulum_study_is_cauchy(pendulum_study):
    rep = pendulum_study
    assert rep.c_H == pytest.approx(2.0, abs=1e-12)
    assert rep.distances_decreasing()
    assert rep.converged
    assert rep.bound_nonincreasing_in_delta() and rep.lipschitz_nonincreasing_in_delta()
    assert max(rep.constraints) <= 1e-3
    assert rep.max_velocity <= 0.9 * 4.0
    d = rep.to_dict()
    assert d["deltas"] == [0.4, 0.2, 0.1, 0.05, 0.025] and len(d["distances"]) == 4


def test_constraint_examples(pendulum_study):
    rep = pendulum_study
    g = rep.graph_0
    zero = ValueField(g.grid, np.zeros((128, 64)), 2.0, g.model_hash)
    one = ValueField(g.grid, np.ones((128, 64)), 2.0, g.model_hash)
    assert subsolution_constraint(zero, rep.measures, FAM) == 0.0
    val = subsolution_constraint(one, rep.measures, FAM)
    # a single rest cycle at x = 1/2: the mean of exp(F0) over the time slices
    t = np.arange(64) / 64
    assert val == pytest.approx(np.mean(np.exp(FAM.f0.F(t))), rel=1e-12)
    assert val > 0
    small = ValueField(Grid(64, 32, 4.0), np.zeros((64, 32)), 2.0, g.model_hash)
    with pytest.raises(ModelMismatch):
        subsolution_constraint(small, rep.measures, FAM)


def test_lower_bound_with_critical_and_zero_subsolutions(pendulum_study):
    rep = pendulum_study
    g0 = rep.graph_0
    c_H, w = mane_critical_value(g0)
    omegas = [critical_weak_kam(g0, c_H, int(w.edges[0, 0]), int(w.edges[0, 1])),
              ValueField(g0.grid, np.zeros((128, 64)), c_H, g0.model_hash)]  # L + max V >= 0
    for delta, u in zip(rep.deltas[:3], rep.fields[:3]):
        gd = build_graph(g0.model.with_(damping=family_profile(FAM, delta)), g0.grid)
        for omega in omegas:
            lb = subsolution_lower_bound(u, omega, FAM, delta, n_curves=8, graph_delta=gd, graph_0=g0,
                                         omega_tol=1e-6)
            assert lb.passed and lb.worst_margin >= -1e-8
            assert lb.max_tail <= 1e-10
            # the discrete measure carries total mass close to the continuum value 1 / f1 = 1
            assert np.all(np.abs(lb.masses - 1.0) <= 0.05)


def test_lower_bound_rejects_non_subsolution(pendulum_study):
    rep = pendulum_study
    g0 = rep.graph_0
    bad = ValueField(g0.grid, np.zeros((128, 64)), 2.0, g0.model_hash)
    bad.values[40, 10] = 1.0
    gd = build_graph(g0.model.with_(damping=family_profile(FAM, 0.4)), g0.grid)
    with pytest.raises(NotSubsolution):
        subsolution_lower_bound(rep.fields[0], bad, FAM, 0.4, graph_delta=gd, graph_0=g0)
    with pytest.raises(ValueError):
        subsolution_lower_bound(rep.fields[0], bad, FAM, 0.4)


def test_lower_bound_free_closed_form():
    # V = 0, c = 0: u_delta = 0 and omega = 0 make every term vanish
    m = ModelSpec(Mechanical(zero_potential(), 0.0), ConstantDamping(0.0))
    fam = DampingFamily(SIN, ConstantDamping(1.0))
    rep = converge_study(m, fam, Grid(32, 16, 2.0))
    g0 = rep.graph_0
    gd = build_graph(m.with_(damping=family_profile(fam, 0.4)), g0.grid)
    omega = ValueField(g0.grid, np.zeros((32, 16)), 0.0, g0.model_hash)
    lb = subsolution_lower_bound(rep.fields[0], omega, fam, 0.4, graph_delta=gd, graph_0=g0)
    assert lb.passed and abs(lb.worst_margin) <= 1e-12 and lb.max_defect <= 1e-12


def test_measures_are_mather_measures(pendulum_study):
    rep = pendulum_study
    assert rep.n_measures == len(rep.measures) >= 1
    for mu in rep.measures:
        assert mu.action() == pytest.approx(-rep.c_H, abs=1e-8)
    _, w = mane_critical_value(rep.graph_0)
    assert mather_measure(w).action() == pytest.approx(-2.0, abs=1e-8)

"""Vanishing-discount study for the damping family f_delta = f0 + delta f1.

With [f0] = 0 and f1 > 0, every delta > 0 gives a dissipative problem whose
solution at alpha = c(H) (the critical value of the f0 problem) exists. As
delta -> 0 these solutions converge; the limit is a subsolution singled out
by the constraint  int exp(F0) f1 u dmu <= 0  over Mather measures mu of f0.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .critical_value import OccupationMeasure, mane_critical_value, mather_measure, mather_set
from .discretization import Grid, TransitionGraph, build_graph, check_velocity_use
from .errors import ModelMismatch, NonPositiveDelta, NotSubsolution, ParamOutOfRange
from .model import CombinedDamping, DampingProfile, ModelSpec
from .weak_kam import ValueField, edge_violations, solve_weak_kam


@dataclass(frozen=True)
class DampingFamily:
    f0: DampingProfile
    f1: DampingProfile
    deltas: tuple = (0.4, 0.2, 0.1, 0.05, 0.025)

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if abs(self.f0.mean) > 1e-12:
            raise ParamOutOfRange(f"f0 must have zero mean, got {self.f0.mean:.3e}")
        if not self.f1.f_min > 0:
            raise ParamOutOfRange("f1 must be positive everywhere")
        d = np.asarray(self.deltas)
        if len(d) == 0 or np.any(d <= 0):
            raise NonPositiveDelta("deltas must be positive")
        if np.any(np.diff(d) >= 0):
            raise ParamOutOfRange("deltas must be strictly decreasing")


def family_profile(fam: DampingFamily, delta: float) -> DampingProfile:
    """f0 + delta f1, with F_delta = F0 + delta F1."""
    if not delta > 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    return CombinedDamping([(1.0, fam.f0), (float(delta), fam.f1)])


def _node_weight(fam: DampingFamily, grid: Grid) -> np.ndarray:
    """exp(F0(t_j)) f1(t_j) broadcast to the (nx, nt) node grid."""
    t = np.arange(grid.nt) * grid.dt
    w = np.exp(fam.f0.F(t)) * fam.f1.f(t)
    return np.broadcast_to(np.asarray(w, dtype=float)[None, :], (grid.nx, grid.nt))


def subsolution_constraint(u: ValueField, measures, fam: DampingFamily) -> float:
    """max over measures of sum weight * exp(F0) f1 u at the edge tails."""
    g = _node_weight(fam, u.grid) * u.values
    vals = []
    for mu in measures:
        if (mu.nx, mu.nt) != (u.grid.nx, u.grid.nt):
            raise ModelMismatch("measure and value field live on different grids")
        vals.append(mu.integrate(g))
    return max(vals) if vals else -math.inf


@dataclass
class LimitReport:
    deltas: list
    c_H: float
    sup_norms: list
    distances: list  # d_k = ||u_k - u_{k+1}||
    lipschitz: list  # (L_x, L_t) per delta
    constraints: list  # max over Mather measures, per delta
    n_measures: int
    max_velocity: float
    converged: bool
    fields: list = field(default_factory=list, repr=False)
    graph_0: TransitionGraph | None = field(default=None, repr=False)
    measures: list = field(default_factory=list, repr=False)

    def distances_decreasing(self) -> bool:
        d = self.distances
        return all(b < a for a, b in zip(d[:-1], d[1:]))

    def bound_nonincreasing_in_delta(self, tol: float = 1e-6) -> bool:
        """Sup norms do not decrease as delta decreases (non-increasing as functions of delta)."""
        return _nondecreasing(self.sup_norms, tol)

    def lipschitz_nonincreasing_in_delta(self, tol: float = 1e-6) -> bool:
        return (_nondecreasing([l[0] for l in self.lipschitz], tol)
                and _nondecreasing([l[1] for l in self.lipschitz], tol))

    def observed_rates(self) -> list:
        """log2(d_k / d_{k+1}) for consecutive distances (a diagnostic only)."""
        d = self.distances
        return [math.log2(a / b) if a > 0 and b > 0 else math.nan for a, b in zip(d[:-1], d[1:])]

    def to_dict(self) -> dict:
        return {
            "c_H": self.c_H,
            "deltas": list(self.deltas),
            "sup_norms": list(self.sup_norms),
            "distances": list(self.distances),
            "lipschitz_x": [l[0] for l in self.lipschitz],
            "lipschitz_t": [l[1] for l in self.lipschitz],
            "constraints": list(self.constraints),
            "n_measures": self.n_measures,
            "max_velocity": self.max_velocity,
            "converged": self.converged,
            "bound_nonincreasing_in_delta": self.bound_nonincreasing_in_delta(),
            "lipschitz_nonincreasing_in_delta": self.lipschitz_nonincreasing_in_delta(),
        }


def _nondecreasing(seq, tol):
    return all(b >= a - tol for a, b in zip(seq[:-1], seq[1:]))


def converge_study(model: ModelSpec, fam: DampingFamily, grid: Grid, tol: float = 1e-2,
                   solve_tol: float = 1e-10, max_cycles: int = 256, threads: int = 1) -> LimitReport:
    """Solve at alpha = c(H) for each delta and collect convergence diagnostics.

    ``tol`` is the threshold on the last pairwise distance for declaring
    numerical convergence (together with strictly decreasing distances).
    """
    graph_0 = build_graph(model.with_(damping=fam.f0), grid)
    c_H, _ = mane_critical_value(graph_0)
    ms = mather_set(graph_0, max_cycles=max_cycles)
    measures = [mather_measure(c) for c in ms.cycles]

    def solve(delta):
        g = build_graph(model.with_(damping=family_profile(fam, delta)), grid)
        u = solve_weak_kam(g, c_H, tol=solve_tol)
        u.info["delta"] = delta
        return u, _max_calibrated_velocity(u, g, c_H)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            solved = list(ex.map(solve, fam.deltas))
    else:
        solved = [solve(d) for d in fam.deltas]
    fields = [u for u, _ in solved]
    vmax_used = max(v for _, v in solved)
    sups = [u.sup_norm() for u in fields]
    lips = [u.lipschitz() for u in fields]
    cons = [subsolution_constraint(u, measures, fam) for u in fields]
    if vmax_used > 0.9 * grid.v_max:
        warnings.warn(f"calibrated velocities reach {vmax_used:.3g} > 0.9 v_max", RuntimeWarning)
    dists = [float(np.max(np.abs(a.values - b.values))) for a, b in zip(fields[:-1], fields[1:])]
    # distances at round-off level count as decreasing (the family may not depend on delta at all)
    conv = bool(all(b < a or b <= 1e-13 for a, b in zip(dists[:-1], dists[1:]))
                and (not dists or dists[-1] <= tol))
    return LimitReport(list(fam.deltas), float(c_H), sups, dists, [tuple(l) for l in lips], cons,
                       len(measures), vmax_used, conv, fields, graph_0, measures)


def _argmin_table(u: ValueField, graph: TransitionGraph, alpha: float) -> np.ndarray:
    """Optimal incoming shift index for every node (k, j + 1), shape (nt, nx)."""
    nt = graph.grid.nt
    arg = np.empty((nt, graph.grid.nx), dtype=np.int64)
    for jp in range(nt):
        cand = (math.exp(graph.F_nodes[jp]) * u.values[graph.src, jp]
                + graph.in_w_L[jp] + alpha * graph.w_T[jp])
        arg[jp] = np.argmin(cand, axis=1)
    return arg


def _max_calibrated_velocity(u: ValueField, graph: TransitionGraph, alpha: float) -> float:
    arg = _argmin_table(u, graph, alpha)
    return check_velocity_use(graph, graph.shifts[np.unique(arg)])


@dataclass
class LowerBoundReport:
    worst_margin: float  # min over curves of u_delta - (full discrete lower bound)
    worst_reduced_margin: float  # same for omega - sum w omega only
    max_tail: float  # largest weight left on the starting node of the backtracked path
    max_defect: float  # largest |defect| from comparing delta and f0 weights
    masses: np.ndarray  # total weight of the discrete measure per curve
    periods: int
    passed: bool


def subsolution_lower_bound(u_delta: ValueField, omega: ValueField, fam: DampingFamily, delta: float,
                            n_curves: int = 16, graph_delta: TransitionGraph | None = None,
                            graph_0: TransitionGraph | None = None, seed: int = 0, tol: float = 1e-8,
                            omega_tol: float = 1e-8, max_periods: int = 5000) -> LowerBoundReport:
    """Check u_delta(x, s) >= omega(x, s) - sum_m w_m omega(z_m) + tail + defect.

    The path z_0, ..., z_N = (x, s) is the backward calibrated curve of
    u_delta, and w_m = (g_{m+1} - g_m) / g_N * exp(F0(t_m) - F0(s)) with
    g = exp(delta F1) is the discrete measure whose density is d exp(delta F1).
    ``tail`` is the weight left on z_0 and ``defect`` accounts for the step
    weights of the delta problem not being exactly g times those of f0; the
    inequality holds exactly for every horizon because omega is a discrete
    subsolution at level alpha = u_delta.alpha for f0.
    """
    if graph_delta is None or graph_0 is None:
        raise ValueError("pass graph_delta and graph_0 built on the value field grid")
    if (omega.grid.nx, omega.grid.nt) != (u_delta.grid.nx, u_delta.grid.nt):
        raise ModelMismatch("omega and u_delta live on different grids")
    alpha = u_delta.alpha
    viol = float(np.max(edge_violations(omega.values, graph_0, alpha)))
    if viol > omega_tol:
        raise NotSubsolution(f"omega violates domination by {viol:.3e} > {omega_tol:.1e}")
    nx_, nt = graph_delta.grid.nx, graph_delta.grid.nt
    mean1 = float(fam.f1.mean)
    periods = min(max_periods, int(math.ceil(math.log(1e12) / (delta * mean1))) + 1)
    arg = _argmin_table(u_delta, graph_delta, alpha)
    F0 = fam.f0.F(np.arange(nt + 1) / nt)
    F1 = fam.f1.F(np.arange(nt + 1) / nt)
    Fd = graph_delta.F_nodes
    mean_d = graph_delta.mean_f
    cost_d = graph_delta.w_L + alpha * graph_delta.w_T[:, None, None]
    cost_0 = graph_0.w_L + alpha * graph_0.w_T[:, None, None]

    rng = np.random.default_rng(seed)
    k = rng.integers(0, nx_, n_curves)
    jN = rng.integers(0, nt, n_curves)
    Fd_N, F0_N, F1_N = Fd[jN], F0[jN], F1[jN]
    uN = u_delta.values[k, jN]
    omegaN = omega.values[k, jN]
    # walk backwards; node m carries relative period p (<= 0) and slice j
    j = jN.copy()
    p = np.zeros(n_curves)
    G_next = np.ones(n_curves)  # G_{m+1} = g_{m+1} / g_N
    sum_w_omega = np.zeros(n_curves)
    mass = np.zeros(n_curves)
    defect = np.zeros(n_curves)
    for _ in range(periods * nt):
        jp = (j - 1) % nt
        p = np.where(j == 0, p - 1, p)
        si = arg[jp, k]
        i = graph_delta.src[k, si]
        Cd = np.exp(p * mean_d - Fd_N) * cost_d[jp, i, si]
        G_m = np.exp(delta * (F1[jp] + p * mean1 - F1_N))
        E0_m = np.exp(F0[jp] - F0_N)
        C0 = G_next * np.exp(-F0_N) * cost_0[jp, i, si]
        defect += Cd - C0
        w = (G_next - G_m) * E0_m
        sum_w_omega += w * omega.values[i, jp]
        mass += w
        k, j, G_next = i, jp, G_m
    tail = G_next * np.exp(F0[j] - F0_N)
    u0 = u_delta.values[k, j]
    full = omegaN - sum_w_omega + tail * (u0 - omega.values[k, j]) + defect
    reduced = omegaN - sum_w_omega
    margin = float(np.min(uN - full))
    red_margin = float(np.min(uN - reduced))
    return LowerBoundReport(margin, red_margin, float(np.max(tail)), float(np.max(np.abs(defect))),
                            mass, periods, bool(margin >= -tol))


"""Discounted Lax-Oleinik iteration, calibrated curves and domination checks.

The discrete value u(i, j) approximates the weak KAM solution at (x_i, t_j).
One time step of the operator is the weighted Bellman backup

    u(k, j+1) = min_edges  exp(F(t_j) - F(t_{j+1})) u(i, j) + exp(-F(t_{j+1})) (w_L + alpha w_T)

and a full period contracts sup-norm distances by exactly exp(-[f]).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import Grid, TransitionGraph, check_velocity_use
from .errors import NoConvergence, NotConverged, NotDissipative, ModelMismatch
from .model import H0_MINUS, mean_damping


@dataclass(eq=False)
class ValueField:
    grid: Grid
    values: np.ndarray  # (nx, nt)
    alpha: float
    model_hash: str
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.nt):
            raise ValueError(f"values shape {self.values.shape} != ({self.grid.nx}, {self.grid.nt})")

    def lipschitz(self) -> tuple[float, float]:
        """Discrete Lipschitz constants in x and in t (both periodic)."""
        u = self.values
        lx = np.max(np.abs(np.roll(u, -1, axis=0) - u)) / self.grid.dx
        lt = np.max(np.abs(np.roll(u, -1, axis=1) - u)) / self.grid.dt
        return float(lx), float(lt)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_dict(self) -> dict:
        return {"Nx": self.grid.nx, "Nt": self.grid.nt, "v_max": float(self.grid.v_max),
                "alpha": float(self.alpha), "model_hash": self.model_hash,
                "values": [float(v) for v in self.values.ravel()]}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ValueField":
        grid = Grid(int(d["Nx"]), int(d["Nt"]), float(d.get("v_max", 1.0)), strict=False)
        vals = np.asarray(d["values"], dtype=float).reshape(grid.nx, grid.nt)
        return cls(grid, vals, float(d["alpha"]), str(d["model_hash"]))

    @classmethod
    def from_json(cls, path) -> "ValueField":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "t", "u"])
            for i in range(self.grid.nx):
                for j in range(self.grid.nt):
                    w.writerow([f"{i * self.grid.dx:.17g}", f"{j * self.grid.dt:.17g}",
                                f"{self.values[i, j]:.17g}"])


def _check_compatible(u: ValueField, graph: TransitionGraph):
    if (u.grid.nx, u.grid.nt) != (graph.grid.nx, graph.grid.nt):
        raise ModelMismatch("value field and graph live on different grids")
    if u.model_hash != graph.model_hash:
        raise ModelMismatch(f"value field model {u.model_hash} != graph model {graph.model_hash}")


def _backup(prev: np.ndarray, graph: TransitionGraph, alpha: float, jp: int):
    """Values on slice jp + 1 from slice jp; returns (values, argmin shift index)."""
    a = math.exp(graph.F_nodes[jp] - graph.F_nodes[jp + 1])
    b = math.exp(-graph.F_nodes[jp + 1])
    cand = a * prev[graph.src] + b * (graph.in_w_L[jp] + alpha * graph.w_T[jp])
    arg = np.argmin(cand, axis=1)
    return np.take_along_axis(cand, arg[:, None], axis=1)[:, 0], arg


def lax_oleinik_slice(u: ValueField, graph: TransitionGraph, alpha: float, j: int) -> np.ndarray:
    """New values on slice j computed from slice j - 1 (cyclically) of ``u``."""
    nt = graph.grid.nt
    jp = (j - 1) % nt
    vals, _ = _backup(u.values[:, jp], graph, alpha, jp)
    return vals


def lax_oleinik_period(graph: TransitionGraph, alpha: float, u0: np.ndarray, keep_slices: bool = False):
    """Apply all nt steps to the t = 0 slice; returns the new t = 0 slice.

    With ``keep_slices`` the intermediate slices are returned as an (nx, nt)
    array whose column 0 holds the input ``u0``.
    """
    cur = np.asarray(u0, dtype=float)
    slices = [cur] if keep_slices else None
    for jp in range(graph.grid.nt):
        cur, _ = _backup(cur, graph, alpha, jp)
        if keep_slices and jp < graph.grid.nt - 1:
            slices.append(cur)
    if keep_slices:
        return cur, np.stack(slices, axis=1)
    return cur


def solve_weak_kam(graph: TransitionGraph, alpha: float, tol: float = 1e-9,
                   max_iter: int | None = None, u0: np.ndarray | None = None) -> ValueField:
    """Fixed point of the one-period discounted Lax-Oleinik operator.

    Starts from u = 0 unless ``u0`` is given. ``info`` on the result records
    iterations, final residual and the observed contraction ratio.
    """
    mf, cls = mean_damping(graph.model.damping)
    if cls != H0_MINUS:
        raise NotDissipative(f"weak KAM solve requires [f] > 0, got [f] = {mf:.3g}")
    if max_iter is None:
        max_iter = 10 * math.ceil(math.log(1.0 / tol) / mf)
    cur = np.zeros(graph.grid.nx) if u0 is None else np.asarray(u0, dtype=float).copy()
    residuals = []
    for it in range(1, max_iter + 1):
        nxt, slices = lax_oleinik_period(graph, alpha, cur, keep_slices=True)
        res = float(np.max(np.abs(nxt - cur)))
        residuals.append(res)
        cur = nxt
        if res <= tol:
            break
    else:
        raise NoConvergence(f"no convergence after {max_iter} periods (residual {residuals[-1]:.3e})")
    values = slices.copy()
    values[:, 0] = cur
    ratios = [r1 / r0 for r0, r1 in zip(residuals[:-1], residuals[1:]) if r0 > 1e3 * tol]
    info = {"iterations": it, "residual": residuals[-1],
            "contraction": float(ratios[-1]) if ratios else float("nan"),
            "expected_contraction": math.exp(-mf)}
    return ValueField(graph.grid, values, float(alpha), graph.model_hash, info)


def period_residual(u: ValueField, graph: TransitionGraph) -> float:
    """sup over all nodes of |(one step backup of u) - u|, scaled by exp(F(t_j))."""
    nt = graph.grid.nt
    worst = 0.0
    for jp in range(nt):
        vals, _ = _backup(u.values[:, jp], graph, u.alpha, jp)
        worst = max(worst, float(np.max(np.abs(vals - u.values[:, (jp + 1) % nt]))) * math.exp(graph.F_nodes[jp + 1]))
    return worst


@dataclass
class CalibratedCurve:
    nodes: np.ndarray  # (n + 1, 3): i, j, winding; time descending
    times: np.ndarray  # (n + 1,) absolute times, nodes[0] at the start time
    velocities: np.ndarray  # (n,) forward-time velocity of each step, time descending
    residuals: np.ndarray  # (n,) per-step calibration residuals
    action_residual: float
    nx: int

    def lift(self) -> np.ndarray:
        """Lifted positions x + winding."""
        return (self.nodes[:, 0] + self.nodes[:, 2] * self.nx) / self.nx

    def rotation(self, last_periods: float | None = None) -> float:
        """Mean velocity over the earliest ``last_periods`` of the backtrack (all by default)."""
        lift = self.lift()
        if last_periods is None:
            return float((lift[0] - lift[-1]) / (self.times[0] - self.times[-1]))
        n = min(len(lift) - 1, int(round(last_periods / (self.times[0] - self.times[1]))))
        return float((lift[-n - 1] - lift[-1]) / (self.times[-n - 1] - self.times[-1]))


def backward_calibrated_curve(u: ValueField, graph: TransitionGraph, x_index: int, t_index: int,
                              horizon_periods: float, check_tol: float = 1e-6) -> CalibratedCurve:
    """Backtrack argmin edges of the Bellman backup from node (x_index, t_index).

    Residuals are measured in the chart of the current period, so they do not
    shrink with the discount weight as the curve recedes into the past.
    """
    _check_compatible(u, graph)
    res0 = period_residual(u, graph)
    if res0 > check_tol:
        raise NotConverged(f"value field residual {res0:.3e} exceeds {check_tol:.1e}")
    nx, nt = graph.grid.nx, graph.grid.nt
    steps = int(round(horizon_periods * nt))
    lift = int(x_index)
    j = int(t_index) % nt
    t_abs = j / nt
    nodes = [(lift % nx, j, lift // nx)]
    times = [t_abs]
    vel = np.empty(steps)
    resid = np.empty(steps)
    shifts_used = np.empty(steps, dtype=np.int64)
    vals = u.values
    for n in range(steps):
        k = lift % nx
        jp = (j - 1) % nt
        a = math.exp(graph.F_nodes[jp] - graph.F_nodes[jp + 1])
        b = math.exp(-graph.F_nodes[jp + 1])
        cost = graph.in_w_L[jp, k] + u.alpha * graph.w_T[jp]
        src = graph.src[k]
        cand = a * vals[src, jp] + b * cost
        si = int(np.argmin(cand))
        s = int(graph.shifts[si])
        resid[n] = abs(math.exp(graph.F_nodes[jp + 1]) * vals[k, j]
                       - math.exp(graph.F_nodes[jp]) * vals[src[si], jp] - cost[si])
        vel[n] = s * graph.grid.velocity_step
        shifts_used[n] = s
        lift -= s
        j = jp
        t_abs -= 1.0 / nt
        nodes.append((lift % nx, j, lift // nx))
        times.append(t_abs)
    check_velocity_use(graph, shifts_used)
    return CalibratedCurve(np.array(nodes, dtype=np.int64), np.array(times), vel, resid,
                           float(resid.max()) if steps else 0.0, nx)


def aubry_nodes(u: ValueField, graph: TransitionGraph, horizon_periods: int = 100, keep_periods: int = 10) -> np.ndarray:
    """Boolean (nx, nt) mask of nodes visited in the last ``keep_periods`` of backtracks.

    Backtracks start from every node of the t = 0 slice simultaneously.
    """
    _check_compatible(u, graph)
    nx, nt = graph.grid.nx, graph.grid.nt
    k = np.arange(nx)
    j = 0
    mask = np.zeros((nx, nt), dtype=bool)
    total = horizon_periods * nt
    vals = u.values
    for n in range(total):
        jp = (j - 1) % nt
        a = math.exp(graph.F_nodes[jp] - graph.F_nodes[jp + 1])
        b = math.exp(-graph.F_nodes[jp + 1])
        src = graph.src[k]
        cand = a * vals[src, jp] + b * (graph.in_w_L[jp, k] + u.alpha * graph.w_T[jp])
        si = np.argmin(cand, axis=1)
        k = src[np.arange(nx), si]
        j = jp
        if n >= total - keep_periods * nt:
            mask[k, j] = True
    return mask


@dataclass
class VerifyReport:
    max_path_violation: float
    max_edge_violation: float
    lipschitz_x: float
    lipschitz_t: float
    n_paths: int

    @property
    def max_violation(self) -> float:
        return max(self.max_path_violation, self.max_edge_violation)

    def passed(self, tol: float = 1e-8) -> bool:
        return self.max_violation <= tol


def edge_violations(values: np.ndarray, graph: TransitionGraph, alpha: float) -> np.ndarray:
    """exp(F(t_{j+1})) u(head) - exp(F(t_j)) u(tail) - cost for every edge, shape (nt, nx, nS)."""
    nt = graph.grid.nt
    out = np.empty_like(graph.in_w_L)
    for jp in range(nt):
        head = values[:, (jp + 1) % nt][:, None]
        tail = values[graph.src, jp]
        out[jp] = (math.exp(graph.F_nodes[jp + 1]) * head - math.exp(graph.F_nodes[jp]) * tail
                   - (graph.in_w_L[jp] + alpha * graph.w_T[jp]))
    return out


def random_path_violations(values: np.ndarray, graph: TransitionGraph, alpha: float, n_paths: int,
                           rng: np.random.Generator, max_periods: int = 3) -> np.ndarray:
    """Domination defect on random discrete paths (one value per path)."""
    nx, nt = graph.grid.nx, graph.grid.nt
    nS = len(graph.shifts)
    lengths = rng.integers(1, max_periods * nt + 1, size=n_paths)
    i = rng.integers(0, nx, size=n_paths)
    j0 = rng.integers(0, nt, size=n_paths)
    mf = graph.mean_f
    start = np.exp(graph.F_nodes[j0]) * values[i, j0]
    cost = np.zeros(n_paths)
    j = j0.copy()
    period = np.zeros(n_paths)
    for step in range(int(lengths.max())):
        active = step < lengths
        si = rng.integers(0, nS, size=n_paths)
        c = (graph.w_L[j, i, si] + alpha * graph.w_T[j]) * np.exp(period * mf)
        cost += np.where(active, c, 0.0)
        i = np.where(active, (i + graph.shifts[si]) % nx, i)
        wrap = active & (j == nt - 1)
        j = np.where(active, (j + 1) % nt, j)
        period = period + wrap
    end = np.exp(graph.F_nodes[j] + period * mf) * values[i, j]
    return end - start - cost


def verify_solution(u: ValueField, graph: TransitionGraph, n_random_curves: int = 1000,
                    seed: int = 0, max_periods: int = 3) -> VerifyReport:
    """Check discrete domination on random paths and on every single edge."""
    _check_compatible(u, graph)
    rng = np.random.default_rng(seed)
    paths = random_path_violations(u.values, graph, u.alpha, n_random_curves, rng, max_periods)
    edges = edge_violations(u.values, graph, u.alpha)
    lx, lt = u.lipschitz()
    return VerifyReport(float(max(paths.max(), 0.0)), float(max(edges.max(), 0.0)), lx, lt, n_random_curves)

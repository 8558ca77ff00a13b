"""Critical value, Mather measures and Peierls barrier for [f] = 0.

With zero mean damping the weight exp(F) is periodic, so path costs add up
across periods. Compressing one period of the layered graph to an nx-node
graph turns the critical value into a minimum cycle mean problem:

    c(H) = -(min cycle mean of the per-period w_L cost) / ell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .discretization import TransitionGraph, shift_index
from .errors import NotCritical
from .model import H0_ZERO, mean_damping
from .weak_kam import ValueField


def _require_critical(graph: TransitionGraph):
    mf, cls = mean_damping(graph.model.damping)
    if cls != H0_ZERO:
        raise NotCritical(f"requires [f]=0, got [f]={mf:.6g}")


@dataclass
class PeriodCosts:
    """All-pairs minimal one-period costs between t = 0 nodes."""

    W: np.ndarray  # (nx, nx) min sum of w_L from a to b over one period
    lift: np.ndarray  # (nx, nx) total integer shift of the minimizing path
    arg: np.ndarray  # (nt, nx, nx) argmin shift index, per slice, source, target


def period_costs(graph: TransitionGraph) -> PeriodCosts:
    cached = getattr(graph, "_period_costs", None)
    if cached is not None:
        return cached
    nx_, nt = graph.grid.nx, graph.grid.nt
    D = np.full((nx_, nx_), np.inf)
    np.fill_diagonal(D, 0.0)
    lift = np.zeros((nx_, nx_), dtype=np.int64)
    arg = np.empty((nt, nx_, nx_), dtype=np.int16)
    rows = np.arange(nx_)[:, None]
    for j in range(nt):
        cand = D[:, graph.src] + graph.in_w_L[j][None, :, :]
        a = np.argmin(cand, axis=2)
        D = np.take_along_axis(cand, a[:, :, None], axis=2)[:, :, 0]
        src = graph.src[np.arange(nx_)[None, :], a]
        lift = lift[rows, src] + graph.shifts[a]
        arg[j] = a
    pc = PeriodCosts(D, lift, arg)
    graph._period_costs = pc
    return pc


def karp_min_mean(W: np.ndarray) -> tuple[float, list[int]]:
    """Karp's minimum cycle mean on a dense weight matrix (inf = no edge).

    Returns the mean and one cycle ``[v0, v1, ..., v0]`` attaining it. The
    cycle is read off the predecessor walk of the optimal vertex; every cycle
    on that walk is tried and the cheapest one kept.
    """
    n = W.shape[0]
    D = np.full((n + 1, n), np.inf)
    D[0] = 0.0
    pred = np.zeros((n + 1, n), dtype=np.int64)
    for k in range(1, n + 1):
        tmp = D[k - 1][:, None] + W
        pred[k] = np.argmin(tmp, axis=0)
        D[k] = tmp[pred[k], np.arange(n)]
    with np.errstate(invalid="ignore"):
        ratios = (D[n][None, :] - D[:n]) / (n - np.arange(n))[:, None]
    ratios = np.where(np.isfinite(D[:n]), ratios, -np.inf)
    worst = ratios.max(axis=0)
    worst = np.where(np.isfinite(D[n]), worst, np.inf)
    v = int(np.argmin(worst))
    lam = float(worst[v])

    walk = [v]
    for k in range(n, 0, -1):
        walk.append(int(pred[k][walk[-1]]))
    walk.reverse()  # forward order, length n + 1
    best, best_mean = None, math.inf
    last_seen: dict[int, int] = {}
    for pos, node in enumerate(walk):
        if node in last_seen:
            cyc = walk[last_seen[node]:pos + 1]
            mean = sum(W[a, b] for a, b in zip(cyc[:-1], cyc[1:])) / (len(cyc) - 1)
            if mean < best_mean:
                best, best_mean = cyc, mean
        last_seen[node] = pos
    return lam, best


def _potentials(Wr: np.ndarray) -> np.ndarray:
    """Shortest distances from a virtual source joined to every vertex (no negative cycles)."""
    pi = np.zeros(Wr.shape[0])
    for _ in range(Wr.shape[0]):
        new = np.minimum(pi, (pi[:, None] + Wr).min(axis=0))
        if np.array_equal(new, pi):
            break
        pi = new
    return pi


@dataclass
class CycleResult:
    mean: float  # cycle cost / (periods * ell); equals -c(H) for an optimal cycle
    edges: np.ndarray  # (periods * nt, 3) rows (i, j, shift), forward in time
    edge_w_L: np.ndarray  # w_L of each edge
    rotation: float
    periods: int
    ell: float
    nx: int = 0
    nt: int = 0

    @property
    def cost(self) -> float:
        return float(self.edge_w_L.sum())

    def nodes(self) -> np.ndarray:
        """Tail nodes as rows (i, j, winding), winding counted from the first node."""
        lift = np.concatenate([[0], np.cumsum(self.edges[:-1, 2])]) + self.edges[0, 0]
        return np.column_stack([self.edges[:, 0], self.edges[:, 1], np.floor_divide(lift, self.nx)])

    def recomputed_mean(self) -> float:
        return self.cost / (self.periods * self.ell)

    def total_winding(self) -> int:
        tot = int(self.edges[:, 2].sum())
        assert tot % self.nx == 0
        return tot // self.nx


def _expand(graph: TransitionGraph, cycle: list[int]) -> CycleResult:
    pc = period_costs(graph)
    nx_, nt = graph.grid.nx, graph.grid.nt
    rows = []
    for a, b in zip(cycle[:-1], cycle[1:]):
        k = b
        seg = []
        for j in range(nt - 1, -1, -1):
            si = int(pc.arg[j, a, k])
            s = int(graph.shifts[si])
            k = (k - s) % nx_
            seg.append((k, j, s))
        assert k == a
        rows.extend(reversed(seg))
    edges = np.array(rows, dtype=np.int64)
    wl = graph.w_L[edges[:, 1], edges[:, 0], [shift_index(s) for s in edges[:, 2]]]
    periods = len(cycle) - 1
    ell = graph.ell
    return CycleResult(float(wl.sum() / (periods * ell)), edges, wl,
                       float(edges[:, 2].sum() / nx_ / periods), periods, ell, nx_, nt)


def mane_critical_value(graph: TransitionGraph) -> tuple[float, CycleResult]:
    """Critical value by Karp's algorithm on the period-compressed graph."""
    _require_critical(graph)
    pc = period_costs(graph)
    lam, cyc = karp_min_mean(pc.W)
    witness = _expand(graph, cyc)
    c_H = -lam / graph.ell
    return c_H, witness


@dataclass
class MatherSet:
    c_H: float
    cycles: list  # list[CycleResult], every enumerated optimal cycle
    compressed_nodes: np.ndarray  # t = 0 nodes lying on some optimal cycle
    node_mask: np.ndarray  # (nx, nt) union of the expanded cycles
    truncated: bool = False


def mather_set(graph: TransitionGraph, tol: float = 1e-9, max_cycles: int = 256) -> MatherSet:
    """All optimal cycles of the compressed graph (mean within ``tol``), expanded.

    Optimal cycles are exactly the cycles of the tight subgraph, i.e. edges
    with zero reduced cost after subtracting the optimal mean and a shortest
    path potential.
    """
    _require_critical(graph)
    pc = period_costs(graph)
    lam, _ = karp_min_mean(pc.W)
    Wr = pc.W - lam
    pi = _potentials(Wr)
    red = Wr + pi[:, None] - pi[None, :]
    scale = max(1.0, float(np.max(np.abs(pc.W[np.isfinite(pc.W)]))))
    tight = red <= tol * scale
    n = len(pi)
    ncomp, labels = connected_components(csr_matrix(tight.astype(np.int8)), directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=ncomp)
    on_cycle = (sizes[labels] > 1) | np.diag(tight)
    # edges inside one strong component only
    mask = tight & (labels[:, None] == labels[None, :]) & on_cycle[:, None]
    G = nx.DiGraph()
    G.add_nodes_from(np.flatnonzero(on_cycle).tolist())
    G.add_edges_from(zip(*np.nonzero(mask)))
    cycles = []
    truncated = False
    for cyc in nx.simple_cycles(G):
        if len(cycles) >= max_cycles:
            truncated = True
            break
        start = cyc.index(min(cyc))
        cyc = cyc[start:] + cyc[:start]
        cycles.append(_expand(graph, cyc + [cyc[0]]))
    cycles.sort(key=lambda c: tuple(c.edges[:, 0]))
    node_mask = np.zeros((graph.grid.nx, graph.grid.nt), dtype=bool)
    for c in cycles:
        node_mask[c.edges[:, 0], c.edges[:, 1]] = True
    return MatherSet(-lam / graph.ell, cycles, np.flatnonzero(on_cycle), node_mask, truncated)


# ---------------------------------------------------------------------------
# drift bisection
# ---------------------------------------------------------------------------

def _weighted_period(graph: TransitionGraph, w: np.ndarray, alpha: float) -> np.ndarray:
    """One period of the min-plus operator on exp(F)-weighted values (F periodic)."""
    for j in range(graph.grid.nt):
        w = (w[graph.src] + graph.in_w_L[j] + alpha * graph.w_T[j]).min(axis=1)
    return w


def drift_bounds(graph: TransitionGraph, alpha: float, burn_in: int | None = None,
                 horizon: int | None = None) -> tuple[float, float]:
    """Certified lower and upper bounds for the per-period drift at level alpha.

    For a min-plus operator T with cycle mean r, min(T^k w - w)/k <= r <=
    max(T^k w - w)/k for every w and k >= 1.
    """
    nx_ = graph.grid.nx
    burn_in = nx_ if burn_in is None else burn_in
    horizon = 2 * nx_ if horizon is None else horizon
    w = np.zeros(nx_)
    for _ in range(burn_in):
        w = _weighted_period(graph, w, alpha)
        w = w - w.min()
    lo, hi = -math.inf, math.inf
    cur = w
    for k in range(1, horizon + 1):
        cur = _weighted_period(graph, cur, alpha)
        d = cur - w
        lo = max(lo, float(d.min()) / k)
        hi = min(hi, float(d.max()) / k)
        if lo >= hi - 1e-15 * max(1.0, abs(hi)):
            break
    return lo, hi


def critical_value_by_drift(graph: TransitionGraph, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Bisect alpha on the sign of the per-period drift of the critical operator.

    Drift is negative below c(H) and positive above. When the certified drift
    bounds straddle zero, the bracket is intersected with the interval they
    imply (the drift is affine in alpha with slope ell).
    """
    _require_critical(graph)
    ell = graph.ell
    lo0, hi0 = drift_bounds(graph, 0.0)
    a_lo, a_hi = -hi0 / ell, -lo0 / ell
    a_lo -= tol
    a_hi += tol
    for _ in range(max_iter):
        if a_hi - a_lo <= tol:
            break
        mid = 0.5 * (a_lo + a_hi)
        lo, hi = drift_bounds(graph, mid)
        if lo > 0:
            a_hi = mid
        elif hi < 0:
            a_lo = mid
        else:
            a_lo = max(a_lo, mid - hi / ell)
            a_hi = min(a_hi, mid - lo / ell)
            if a_hi - a_lo > tol:
                lo, hi = drift_bounds(graph, mid, burn_in=8 * graph.grid.nx, horizon=8 * graph.grid.nx)
                a_lo = max(a_lo, mid - hi / ell)
                a_hi = min(a_hi, mid - lo / ell)
                if a_hi - a_lo > tol:
                    break
    return 0.5 * (a_lo + a_hi)


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

@dataclass
class OccupationMeasure:
    """Probability weights on graph edges ``(i, j, shift)``."""

    nx: int
    nt: int
    edges: np.ndarray
    weights: np.ndarray
    edge_w_L: np.ndarray
    ell: float

    def divergence(self, phi: np.ndarray) -> float:
        """sum weight * (phi(head) - phi(tail)) for a node function phi of shape (nx, nt)."""
        i, j, s = self.edges.T
        head = phi[(i + s) % self.nx, (j + 1) % self.nt]
        return float(np.sum(self.weights * (head - phi[i, j])))

    def time_marginal(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], weights=self.weights, minlength=self.nt)

    def action(self) -> float:
        """Normalized weighted action sum weight * w_L * nt / ell."""
        return float(np.sum(self.weights * self.edge_w_L) * self.nt / self.ell)

    def integrate(self, g: np.ndarray) -> float:
        """Integral of a node function against the measure (evaluated at edge tails)."""
        return float(np.sum(self.weights * g[self.edges[:, 0], self.edges[:, 1]]))


def mather_measure(witness: CycleResult) -> OccupationMeasure:
    n = len(witness.edges)
    return OccupationMeasure(witness.nx, witness.nt, witness.edges.copy(), np.full(n, 1.0 / n),
                             witness.edge_w_L.copy(), witness.ell)


def path_measure(graph: TransitionGraph, edges: np.ndarray) -> OccupationMeasure:
    """Uniform occupation measure of an arbitrary closed edge path."""
    edges = np.asarray(edges, dtype=np.int64)
    wl = graph.w_L[edges[:, 1], edges[:, 0], [shift_index(s) for s in edges[:, 2]]]
    n = len(edges)
    return OccupationMeasure(graph.grid.nx, graph.grid.nt, edges, np.full(n, 1.0 / n), wl, graph.ell)


# ---------------------------------------------------------------------------
# Peierls barrier and critical solution
# ---------------------------------------------------------------------------

@dataclass
class BarrierResult:
    values: np.ndarray  # (nx, nt)
    gap: float  # change of the running minimum over the last 8 horizons
    z_index: int
    s_index: int
    n_min: int
    n_max: int
    c_H: float


def peierls_barrier(graph: TransitionGraph, c_H: float, z_index: int, s_index: int,
                    n_min: int = 8, n_max: int = 64) -> BarrierResult:
    """Running minimum over horizons n in [n_min, n_max] of the n-period action.

    Paths start at node (z, s) and end at (x_i, t_j + n); each step costs
    w_L + c_H * ell / nt, the discrete form of int (exp(F) L + c ell).
    """
    _require_critical(graph)
    if not 1 <= n_min <= n_max:
        raise ValueError("need 1 <= n_min <= n_max")
    nx_, nt = graph.grid.nx, graph.grid.nt
    per_step = c_H * graph.ell / nt
    cur = np.full(nx_, np.inf)
    cur[z_index] = 0.0
    run = np.full((nx_, nt), np.inf)
    snapshot = None
    snap_n = max(n_min, n_max - 7)
    # after m steps the path sits on slice j = (s + m) mod nt at horizon n = (m + s - j) / nt
    for m in range(1, n_max * nt + nt - s_index):
        j_from = (s_index + m - 1) % nt
        cur = (cur[graph.src] + graph.in_w_L[j_from] + per_step).min(axis=1)
        j = (s_index + m) % nt
        n = (m + s_index - j) // nt
        if n == snap_n and j == 0:
            snapshot = run.copy()
        if n >= n_min:
            run[:, j] = np.minimum(run[:, j], cur)
    if snapshot is None or not np.all(np.isfinite(snapshot)):
        gap = math.inf
    else:
        gap = float(np.max(np.abs(run - snapshot)))
    return BarrierResult(run, gap, z_index, s_index, n_min, n_max, c_H)


def critical_weak_kam(graph: TransitionGraph, c_H: float, z_index: int, s_index: int,
                      n_min: int = 8, n_max: int = 64) -> ValueField:
    """Critical solution exp(-F) (barrier + c_H * int_s^t (exp(F) - ell))."""
    bar = peierls_barrier(graph, c_H, z_index, s_index, n_min, n_max)
    nt = graph.grid.nt
    P = np.concatenate([[0.0], np.cumsum(graph.w_T - graph.ell / nt)])[:nt]
    corr = P - P[s_index]
    vals = np.exp(-graph.F_nodes[:nt])[None, :] * (bar.values + c_H * corr[None, :])
    return ValueField(graph.grid, vals, float(c_H), graph.model_hash,
                      {"gap": bar.gap, "z_index": z_index, "s_index": s_index})


def cross_base_differences(graph: TransitionGraph, c_H: float, bases, n_min: int = 8,
                           n_max: int = 64) -> np.ndarray:
    """Pairwise sup-norm differences of critical solutions built from different base nodes.

    No invariance is assumed; the matrix is a diagnostic of how the
    normalization depends on the base node.
    """
    fields = [critical_weak_kam(graph, c_H, int(z), int(s), n_min, n_max).values for z, s in bases]
    n = len(fields)
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            out[a, b] = out[b, a] = float(np.max(np.abs(fields[a] - fields[b])))
    return out

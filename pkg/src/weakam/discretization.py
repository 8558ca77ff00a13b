"""Space-time grid on the torus and the one-step transition graph.

Node ``(i, j)`` is the point ``(x_i, t_j) = (i / nx, j / nt)``. An edge leaves
``(i, j)`` with an integer shift ``s`` (displacement ``s * dx`` during one time
step) and lands on ``((i + s) mod nx, j + 1 mod nt)``. Each edge stores

    w_L = int_{t_j}^{t_j+dt} exp(F(tau)) L(x(tau), v, tau) dtau
    w_T = int_{t_j}^{t_j+dt} exp(F(tau)) dtau

along the straight segment, with F the damping antiderivative taken on the
first period. Crossing into period n multiplies both by ``exp(n [f])``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import GridTooCoarse, ParamOutOfRange
from .model import ModelSpec, H0_MINUS, mean_damping


@dataclass(frozen=True)
class Grid:
    nx: int
    nt: int
    v_max: float
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.strict:
            if self.nx < 8 or self.nt < 8:
                raise ParamOutOfRange(f"grid needs nx >= 8 and nt >= 8, got {self.nx}x{self.nt}")
            if self.v_max < 1:
                raise ParamOutOfRange(f"v_max must be >= 1, got {self.v_max}")
        if self.nx < 1 or self.nt < 1 or not self.v_max > 0:
            raise ParamOutOfRange("grid sizes and v_max must be positive")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @property
    def max_shift(self) -> int:
        return int(math.floor(self.v_max * self.nx / self.nt + 1e-9))

    @property
    def velocity_step(self) -> float:
        return self.nt / self.nx

    def shifts(self) -> np.ndarray:
        """Admissible shifts ordered 0, -1, 1, -2, 2, ... (tie-break order)."""
        S = self.max_shift
        out = [0]
        for k in range(1, S + 1):
            out += [-k, k]
        return np.array(out, dtype=np.int64)

    def describe(self) -> dict:
        return {"nx": self.nx, "nt": self.nt, "v_max": float(self.v_max)}


def shift_index(s: int) -> int:
    return 2 * abs(s) - 1 if s < 0 else 2 * s


class Edge(NamedTuple):
    i: int
    j: int
    shift: int


def default_v_max(model: ModelSpec) -> float:
    """2 (1 + ||V||_C1 varsigma([f])) for dissipative mechanical models.

    Otherwise 2 (1 + ||V||_C1 + |c|) for mechanical models and 4 for generic
    Lagrangians; pass an explicit value whenever a sharper bound is known.
    """
    if not model.is_mechanical:
        return 4.0
    norm = model.variant.potential.c1_norm()
    _, cls = mean_damping(model.damping)
    if cls == H0_MINUS:
        return 2.0 * (1.0 + norm * model.damping.varsigma())
    return 2.0 * (1.0 + norm + abs(model.c))


def simpson_weights(q: int) -> np.ndarray:
    if q < 2 or q % 2:
        raise ParamOutOfRange("Simpson rule needs an even number of sub-intervals")
    w = np.ones(q + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * q)


@dataclass(eq=False)
class TransitionGraph:
    grid: Grid
    model: ModelSpec
    shifts: np.ndarray  # (nS,)
    w_L: np.ndarray  # (nt, nx, nS), indexed by source node
    w_T: np.ndarray  # (nt,)
    F_nodes: np.ndarray  # (nt + 1,), F(j / nt) on the first period
    q: int = 4
    src: np.ndarray = field(init=False, repr=False)  # (nx, nS) source of the edge into k
    in_w_L: np.ndarray = field(init=False, repr=False)  # (nt, nx, nS) w_L arranged by target

    def __post_init__(self):
        nx = self.grid.nx
        k = np.arange(nx)[:, None]
        self.src = np.mod(k - self.shifts[None, :], nx)
        self.in_w_L = np.take_along_axis(self.w_L, self.src[None, :, :].repeat(self.grid.nt, 0), axis=1)

    @property
    def period_scale(self) -> float:
        return math.exp(self.model.damping.mean)

    @property
    def mean_f(self) -> float:
        return self.model.damping.mean

    @property
    def ell(self) -> float:
        """Discrete integral of exp(F) over one period (sum of w_T)."""
        return float(self.w_T.sum())

    @property
    def model_hash(self) -> str:
        return self.model.model_hash

    @property
    def n_edges(self) -> int:
        return self.w_L.size

    def edge_weights(self, edge: Edge) -> tuple[float, float]:
        si = shift_index(edge.shift)
        return float(self.w_L[edge.j, edge.i, si]), float(self.w_T[edge.j])

    def head(self, edge: Edge) -> tuple[int, int]:
        return (edge.i + edge.shift) % self.grid.nx, (edge.j + 1) % self.grid.nt

    def velocities(self) -> np.ndarray:
        return self.shifts * self.grid.velocity_step

    def dump_csv(self, path) -> None:
        """Edge list with columns i, j, k, winding, w_L, w_T."""
        nx = self.grid.nx
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "k", "winding", "w_L", "w_T"])
            for j in range(self.grid.nt):
                for i in range(nx):
                    for si, s in enumerate(self.shifts):
                        w.writerow([i, j, (i + s) % nx, (i + s) // nx, f"{self.w_L[j, i, si]:.17g}",
                                    f"{self.w_T[j]:.17g}"])


def build_graph(model: ModelSpec, grid: Grid, q: int = 4) -> TransitionGraph:
    """Discretize the weighted action on straight one-step segments.

    Parameters
    ----------
    model : ModelSpec
        Lagrangian and damping. Generic Lagrangians must broadcast over numpy arrays.
    grid : Grid
    q : int
        Even number of Simpson sub-intervals per time step.
    """
    if grid.v_max * grid.dt < grid.dx:
        raise GridTooCoarse(f"v_max * dt = {grid.v_max * grid.dt:.4g} < dx = {grid.dx:.4g}")
    nx, nt = grid.nx, grid.nt
    shifts = grid.shifts()
    v = shifts * grid.velocity_step
    wq = simpson_weights(q) * grid.dt
    sub = np.linspace(0.0, grid.dt, q + 1)
    x0 = np.arange(nx) * grid.dx
    damping = model.damping

    w_L = np.empty((nt, nx, len(shifts)))
    w_T = np.empty(nt)
    for j in range(nt):
        tau = j * grid.dt + sub
        eF = np.exp(damping.F(tau))
        X = np.mod(x0[:, None, None] + v[None, :, None] * sub[None, None, :], 1.0)
        Lval = model.lagrangian(X, v[None, :, None], tau[None, None, :])
        Lval = np.broadcast_to(Lval, X.shape)
        w_L[j] = Lval @ (wq * eF)
        w_T[j] = float(wq @ eF)
    F_nodes = damping.F(np.arange(nt + 1) * grid.dt)
    return TransitionGraph(grid, model, shifts, w_L, w_T, np.asarray(F_nodes, dtype=float), q)


def edge_cost(graph: TransitionGraph, edge: Edge, alpha: float) -> float:
    w_L, w_T = graph.edge_weights(edge)
    return w_L + alpha * w_T


def check_velocity_use(graph: TransitionGraph, shifts_used) -> float:
    """Largest |velocity| among the given shifts; warns when it exceeds 0.9 v_max."""
    vmax_used = float(np.max(np.abs(np.asarray(shifts_used)))) * graph.grid.velocity_step if np.size(shifts_used) else 0.0
    if vmax_used > 0.9 * graph.grid.v_max:
        warnings.warn(f"minimizers use |v| = {vmax_used:.3g} > 0.9 v_max; increase v_max", RuntimeWarning)
    return vmax_used

"""Extended damped flow in (x, p, t, I, u), rotation numbers and attractor checks.

For H = (p + c)^2 / 2 + V(x, t) and damping f(t) the flow is

    x' = p + c,  p' = -V_x - f p,  t' = 1,
    I' = -V_t - f' u - f I,  u' = (p^2 - c^2) / 2 - V + alpha - f u,

and Hhat = I + H + f u - alpha obeys Hhat' = -f Hhat, so exp(F) Hhat is constant.
All integrators are fixed-step RK4 and vectorize over a leading batch axis.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelMismatch, NonFinite
from .model import ModelSpec
from .weak_kam import ValueField

BLOWUP = 1e12
PLATEAU_TOL = 1e-4


@dataclass(frozen=True)
class ExtendedState:
    x: float
    p: float
    t: float = 0.0
    I: float = 0.0
    u: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.p, self.t, self.I, self.u], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ExtendedState":
        return cls(*(float(v) for v in a))

    def wrapped(self) -> tuple[float, float]:
        return self.x % 1.0, self.t % 1.0


def _require_mechanical(model: ModelSpec):
    if not model.is_mechanical:
        raise ModelMismatch("the extended flow needs a mechanical Hamiltonian (p + c)^2 / 2 + V")


def _rhs(model: ModelSpec, Y: np.ndarray, c=None) -> np.ndarray:
    """Right-hand side on an array of states with last axis (x, p, t, I, u)."""
    pot = model.variant.potential
    damp = model.damping
    c = model.c if c is None else c
    x, p, t, I, u = (Y[..., k] for k in range(5))
    f = damp.f(t)
    V = pot.V(x, t)
    out = np.empty_like(Y)
    out[..., 0] = p + c
    out[..., 1] = -pot.V_x(x, t) - f * p
    out[..., 2] = 1.0
    out[..., 3] = -pot.V_t(x, t) - damp.df(t) * u - f * I
    out[..., 4] = 0.5 * (p * p - c * c) - V + model.alpha - f * u
    return out


def extended_vector_field(model: ModelSpec, s: ExtendedState) -> ExtendedState:
    _require_mechanical(model)
    return ExtendedState.from_array(_rhs(model, s.as_array()))


def hat_H(model: ModelSpec, Y) -> np.ndarray:
    """Hhat = I + H(x, p, t) + f(t) u - alpha."""
    Y = np.asarray(Y, dtype=float)
    x, p, t, I, u = (Y[..., k] for k in range(5))
    return I + model.hamiltonian(x, p, t) + model.damping.f(t) * u - model.alpha


def _rk4_step(model, Y, h, c=None):
    k1 = _rhs(model, Y, c)
    k2 = _rhs(model, Y + 0.5 * h * k1, c)
    k3 = _rhs(model, Y + 0.5 * h * k2, c)
    k4 = _rhs(model, Y + h * k3, c)
    return Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _n_steps(T: float, dt: float) -> int:
    if not dt > 0 or not T >= dt:
        raise ValueError(f"need dt > 0 and T >= dt, got T={T}, dt={dt}")
    return int(math.floor(T / dt + 1e-9))


def _check_finite(Y, step):
    bad = ~np.all(np.isfinite(Y) & (np.abs(Y) <= BLOWUP), axis=-1)
    if np.any(bad):
        idx = np.flatnonzero(np.atleast_1d(bad))
        raise NonFinite(f"state left [-1e12, 1e12] at step {step} (batch members {idx[:8].tolist()})")


@dataclass
class Trajectory:
    dt: float
    samples: np.ndarray  # (n + 1, 5) or (n + 1, batch, 5)
    model_hash: str
    alpha: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.samples[..., 2]

    def state(self, k: int) -> ExtendedState:
        return ExtendedState.from_array(self.samples[k])

    def to_csv(self, path, model: ModelSpec) -> None:
        """Columns t, x, p, I, u, F, Hhat for a single trajectory."""
        S = self.samples
        if S.ndim != 2:
            raise ValueError("CSV export handles a single trajectory")
        F = model.damping.F(S[:, 2])
        Hh = hat_H(model, S)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "p", "I", "u", "F", "Hhat"])
            for row, Fk, Hk in zip(S, F, Hh):
                w.writerow([f"{v:.17g}" for v in (row[2], row[0], row[1], row[3], row[4], Fk, Hk)])


def integrate(model: ModelSpec, s0, T: float, dt: float, record_every: int = 1) -> Trajectory:
    """Fixed-step classical RK4.

    ``s0`` may be an :class:`ExtendedState` or an array of shape (5,) or
    (batch, 5). Samples are stored every ``record_every`` steps (the sample
    count is floor(T / dt) + 1 when ``record_every`` is 1).
    """
    _require_mechanical(model)
    Y = s0.as_array() if isinstance(s0, ExtendedState) else np.array(s0, dtype=float)
    n = _n_steps(T, dt)
    _check_finite(Y, 0)
    out = [Y.copy()]
    for k in range(1, n + 1):
        Y = _rk4_step(model, Y, dt)
        if k % record_every == 0 or k == n:
            _check_finite(Y, k)
            out.append(Y.copy())
    return Trajectory(dt * record_every, np.array(out), model.model_hash, model.alpha)


def energy_drift(model: ModelSpec, traj: Trajectory) -> float:
    """max |exp(F(t)) Hhat(t) - exp(F(t0)) Hhat(t0)| / max(1, |Hhat(t0)|)."""
    S = traj.samples
    E = np.exp(model.damping.F(S[..., 2])) * hat_H(model, S)
    return float(np.max(np.abs(E - E[0]) / np.maximum(1.0, np.abs(hat_H(model, S[0])))))


# ---------------------------------------------------------------------------
# rotation numbers
# ---------------------------------------------------------------------------

def varsigma_bound(model: ModelSpec) -> float:
    """varsigma([f]) * ||V||_C1, the asymptotic bound on |p| and |rho - c|."""
    return model.damping.varsigma() * model.variant.potential.c1_norm()


def _rotation_batch(model: ModelSpec, cs: np.ndarray, Y0: np.ndarray, T: float, transient: float,
                    dt: float, extra: float | None = None):
    """Winding rates over [transient, T] (and [transient, extra]) for a batch of c values."""
    n = _n_steps(T, dt)
    n_tr = int(round(transient / dt))
    n_ex = _n_steps(extra, dt) if extra is not None else n
    Y = np.array(Y0, dtype=float)
    x_tr = x_T = None
    for k in range(1, max(n, n_ex) + 1):
        Y = _rk4_step(model, Y, dt, cs)
        if k % 1000 == 0:
            _check_finite(Y, k)
        if k == n_tr:
            x_tr = Y[:, 0].copy()
        if k == n:
            x_T = Y[:, 0].copy()
    _check_finite(Y, max(n, n_ex))
    if n_tr == 0:
        x_tr = np.asarray(Y0, dtype=float)[:, 0]
    rho = (x_T - x_tr) / (n * dt - n_tr * dt)
    rho_ex = (Y[:, 0] - x_tr) / (n_ex * dt - n_tr * dt)
    return rho, rho_ex


def rotation_number(model: ModelSpec, c: float | None = None, s0: ExtendedState | None = None,
                    T: float = 400.0, transient: float = 100.0, dt: float = 0.01) -> float:
    """(x(T) - x(transient)) / (T - transient) on the lift."""
    _require_mechanical(model)
    if model.damping.mean <= 0:
        warnings.warn("rotation number of a non-dissipative system need not be unique", RuntimeWarning)
    c = model.c if c is None else float(c)
    s0 = ExtendedState(0.0, 0.0) if s0 is None else s0
    rho, _ = _rotation_batch(model, np.array([c]), s0.as_array()[None, :], T, transient, dt)
    return float(rho[0])


@dataclass
class StaircaseResult:
    c: np.ndarray
    rho: np.ndarray
    bound: float
    plateau_id: np.ndarray  # -1 outside plateaus
    violations: list
    additivity_gap: np.ndarray  # |rho over [tr, T] - rho over [tr, 2T - tr]|

    def plateaus(self) -> list[tuple[float, float, float]]:
        """(c_start, c_end, rho) for every detected plateau."""
        out = []
        for pid in np.unique(self.plateau_id[self.plateau_id >= 0]):
            idx = np.flatnonzero(self.plateau_id == pid)
            out.append((float(self.c[idx[0]]), float(self.c[idx[-1]]), float(np.mean(self.rho[idx]))))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c", "rho", "bound", "plateau_id"])
            for c, r, p in zip(self.c, self.rho, self.plateau_id):
                w.writerow([f"{c:.17g}", f"{r:.17g}", f"{self.bound:.17g}", int(p)])


def find_plateaus(rho: np.ndarray, tol: float = PLATEAU_TOL) -> np.ndarray:
    """Label maximal runs of at least two consecutive rows with rho equal within tol."""
    ids = np.full(len(rho), -1, dtype=np.int64)
    nxt, start = 0, 0
    for k in range(1, len(rho) + 1):
        if k == len(rho) or abs(rho[k] - rho[start]) > tol:
            if k - start >= 2:
                ids[start:k] = nxt
                nxt += 1
            start = k
    return ids


def rotation_staircase(model: ModelSpec, c_grid, s0: ExtendedState | None = None, T: float = 400.0,
                       transient: float = 100.0, dt: float = 0.01, check_additivity: bool = False,
                       chunk: int = 256, threads: int = 1) -> StaircaseResult:
    """Rotation numbers for every c in ``c_grid`` (sorted), sharing start point and transient.

    The c values are integrated as one vectorized batch per chunk; with
    ``threads > 1`` the grid is split into that many chunks run concurrently.
    Each c value evolves independently, so results do not depend on chunking.
    """
    _require_mechanical(model)
    cs = np.asarray(c_grid, dtype=float)
    if np.any(np.diff(cs) < 0):
        raise ValueError("c_grid must be sorted")
    s0 = ExtendedState(0.0, 0.0) if s0 is None else s0
    extra = 2 * T - transient if check_additivity else None
    if threads > 1:
        chunk = max(1, int(math.ceil(len(cs) / threads)))
    starts = list(range(0, len(cs), chunk))

    def run(a):
        part = cs[a:a + chunk]
        Y0 = np.repeat(s0.as_array()[None, :], len(part), axis=0)
        return _rotation_batch(model, part, Y0, T, transient, dt, extra)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(a) for a in starts]
    rho = np.concatenate([r for r, _ in parts]) if parts else np.empty(0)
    rho_ex = np.concatenate([r for _, r in parts]) if parts else np.empty(0)
    bound = varsigma_bound(model) if model.damping.mean > 0 else math.inf
    viol = [float(c) for c, r in zip(cs, rho) if abs(r - c) > bound + 1e-3]
    gap = np.abs(rho - rho_ex) if check_additivity else np.zeros(len(cs))
    return StaircaseResult(cs, rho, bound, find_plateaus(rho), viol, gap)


# ---------------------------------------------------------------------------
# attractor diagnostics
# ---------------------------------------------------------------------------

def interpolate_field(u: ValueField, x, t):
    """Periodic bilinear interpolation of a grid field at arbitrary (x, t)."""
    nx, nt = u.grid.nx, u.grid.nt
    gx = np.mod(np.asarray(x, dtype=float), 1.0) * nx
    gt = np.mod(np.asarray(t, dtype=float), 1.0) * nt
    i0 = np.floor(gx).astype(np.int64) % nx
    j0 = np.floor(gt).astype(np.int64) % nt
    ax = gx - np.floor(gx)
    at = gt - np.floor(gt)
    i1, j1 = (i0 + 1) % nx, (j0 + 1) % nt
    U = u.values
    return ((1 - ax) * (1 - at) * U[i0, j0] + ax * (1 - at) * U[i1, j0]
            + (1 - ax) * at * U[i0, j1] + ax * at * U[i1, j1])


def interpolation_error(u: ValueField) -> float:
    """max second difference / 8 in x plus the same in t (bilinear error estimate)."""
    U = u.values
    dxx = np.max(np.abs(np.roll(U, -1, 0) - 2 * U + np.roll(U, 1, 0)))
    dtt = np.max(np.abs(np.roll(U, -1, 1) - 2 * U + np.roll(U, 1, 1)))
    return float((dxx + dtt) / 8.0)


@dataclass
class SigmaReport:
    times: np.ndarray
    gap: np.ndarray  # u(t) - u_alpha(x(t), t)
    m: np.ndarray  # exp(F(t)) (u_alpha - u)
    tol_mono: float
    max_increase: float  # largest single-sample increase of m
    max_rise: float  # largest rise of m above its running minimum
    monotone: bool
    classification: np.ndarray  # +1 above the graph, 0 on it, -1 below (within tol)
    final_class: int
    entry_time: float  # first time the trajectory is on or above the graph, nan if never

    @property
    def final_label(self) -> str:
        return {1: "Sigma-", 0: "Sigma0", -1: "Sigma+"}[self.final_class]


def sigma_diagnostics(u: ValueField, model: ModelSpec, traj: Trajectory, class_tol: float | None = None
                      ) -> SigmaReport:
    """Position of a trajectory relative to the graph of u and monotonicity of m(t).

    Above the graph (u > u_alpha) is Sigma-; on it, Sigma0; below it, Sigma+.
    m(t) = exp(F(t)) (u_alpha(x, t) - u(t)) must be nonincreasing; each
    sample-to-sample increase is compared with tol_mono = bilinear error
    estimate + 1e-6, scaled by exp(F) at the later sample.
    """
    if u.model_hash != traj.model_hash or u.model_hash != model.model_hash:
        raise ModelMismatch("value field, model and trajectory come from different models")
    S = traj.samples
    if S.ndim != 2:
        raise ValueError("sigma_diagnostics handles one trajectory at a time")
    x, t, uu = S[:, 0], S[:, 2], S[:, 4]
    ua = interpolate_field(u, x, t)
    eF = np.exp(model.damping.F(t))
    gap = uu - ua
    m = -eF * gap
    err = interpolation_error(u)
    tol_mono = err + 1e-6
    inc = np.diff(m) / eF[1:]
    max_inc = float(np.max(inc)) if len(inc) else 0.0
    rise = (m - np.minimum.accumulate(m)) / eF
    max_rise = float(np.max(rise))
    ctol = (err + 1e-6) if class_tol is None else class_tol
    cls = np.where(gap > ctol, 1, np.where(gap < -ctol, -1, 0))
    entered = np.flatnonzero(cls >= 0)
    return SigmaReport(t, gap, m, tol_mono, max_inc, max_rise, bool(max_inc <= tol_mono), cls,
                       int(cls[-1]), float(t[entered[0]]) if len(entered) else math.nan)


@dataclass
class AttractorReport:
    sup_p: float
    sup_u: float
    sup_I: float
    bound: float  # varsigma([f]) ||V||_C1
    sharp_bound: float | None  # ||V||_C1 / lambda for constant damping
    margin: float
    passed: bool
    seed: int
    initial: np.ndarray = field(repr=False)


def random_initial_states(n: int, seed: int = 0, p_scale: float = 3.0, u_scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Y = np.zeros((n, 5))
    Y[:, 0] = rng.uniform(0.0, 1.0, n)
    Y[:, 1] = rng.uniform(-p_scale, p_scale, n)
    Y[:, 3] = rng.uniform(-u_scale, u_scale, n)
    Y[:, 4] = rng.uniform(-u_scale, u_scale, n)
    return Y


def attractor_bounds(model: ModelSpec, ensemble_size: int = 64, T: float = 100.0, dt: float = 0.01,
                     late_fraction: float = 0.2, seed: int = 0, margin: float = 1e-6) -> AttractorReport:
    """Late-time sup of |p|, |u|, |I| over a random ensemble against the varsigma bound."""
    _require_mechanical(model)
    if model.damping.mean <= 0:
        raise ValueError("attractor bounds need [f] > 0")
    Y0 = random_initial_states(ensemble_size, seed)
    n = _n_steps(T, dt)
    late = int(math.ceil(n * (1 - late_fraction)))
    Y = Y0.copy()
    sup = np.zeros(3)
    for k in range(1, n + 1):
        Y = _rk4_step(model, Y, dt)
        if k % 1000 == 0:
            try:
                _check_finite(Y, k)
            except NonFinite as exc:
                raise NonFinite(f"{exc} (seed {seed})") from None
        if k >= late:
            sup = np.maximum(sup, np.max(np.abs(Y[:, [1, 4, 3]]), axis=0))
    bound = varsigma_bound(model)
    sharp = None
    if model.damping.is_constant():
        sharp = model.variant.potential.c1_norm() / model.damping.mean
    return AttractorReport(float(sup[0]), float(sup[1]), float(sup[2]), bound, sharp, margin,
                           bool(sup[0] <= bound + margin), seed, Y0)

"""Damping profiles, potentials and convex Lagrangians on the circle.

Positions use the period-1 chart ``x in [0, 1)``; time is also period 1.
Everything here is immutable after construction and safe to share.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .errors import NonConvexDetected, ParamOutOfRange, UnknownPreset

TWO_PI = 2.0 * math.pi

H0_MINUS = "H0_minus"  # [f] > 0, dissipative
H0_ZERO = "H0_zero"  # [f] = 0, periodically conservative
H0_PLUS = "H0_plus"  # [f] < 0, accelerative


# ---------------------------------------------------------------------------
# damping
# ---------------------------------------------------------------------------

class DampingProfile:
    """A 1-periodic damping coefficient f(t) and its antiderivative F.

    Subclasses provide ``f``, ``F`` (with ``F(0) = 0``), ``df`` and
    ``describe``. Derived constants are computed lazily.
    """

    def f(self, t):
        raise NotImplementedError

    def F(self, t):
        raise NotImplementedError

    def df(self, t):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    @cached_property
    def mean(self) -> float:
        return float(self.F(1.0) - self.F(0.0))

    @cached_property
    def k0(self) -> float:
        """max over s in [0, 2] of |F(s)|."""
        s = np.linspace(0.0, 2.0, 20001)
        vals = np.abs(self.F(s))
        i = int(np.argmax(vals))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
        res = optimize.minimize_scalar(lambda z: -abs(float(self.F(z))), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        return float(max(vals[i], -res.fun))

    @cached_property
    def ell(self) -> float:
        """Integral of exp(F) over one period."""
        val, _ = integrate.quad(lambda t: math.exp(float(self.F(t))), 0.0, 1.0,
                                epsabs=1e-14, epsrel=1e-13, limit=200)
        return float(val)

    @cached_property
    def f_min(self) -> float:
        return float(np.min(self.f(np.linspace(0.0, 1.0, 4097))))

    @cached_property
    def f_sup(self) -> float:
        return float(np.max(np.abs(self.f(np.linspace(0.0, 1.0, 4097)))))

    def varsigma(self) -> float:
        """exp(2 k0 + [f]) / [f]; bounds the integral of exp(F(s) - F(t)) over s < t."""
        m = self.mean
        if m <= 0:
            return math.inf
        return math.exp(2.0 * self.k0 + m) / m

    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True, eq=False)
class ConstantDamping(DampingProfile):
    lam: float

    def f(self, t):
        return np.zeros_like(np.asarray(t, dtype=float)) + self.lam

    def F(self, t):
        return self.lam * np.asarray(t, dtype=float)

    def df(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def describe(self):
        return {"kind": "constant", "coeffs": [float(self.lam)]}

    def is_constant(self):
        return True


@dataclass(frozen=True, eq=False)
class FourierDamping(DampingProfile):
    """f(t) = a0 + sum_k cos_k cos(2 pi k t) + sin_k sin(2 pi k t), k = 1, 2, ..."""

    a0: float
    cos: tuple = ()
    sin: tuple = ()

    def _modes(self):
        n = max(len(self.cos), len(self.sin))
        a = np.zeros(n)
        b = np.zeros(n)
        a[:len(self.cos)] = self.cos
        b[:len(self.sin)] = self.sin
        return np.arange(1, n + 1), a, b

    def f(self, t):
        t = np.asarray(t, dtype=float)
        k, a, b = self._modes()
        out = np.full(t.shape, float(self.a0))
        for kk, ak, bk in zip(k, a, b):
            w = TWO_PI * kk * t
            out = out + ak * np.cos(w) + bk * np.sin(w)
        return out

    def F(self, t):
        t = np.asarray(t, dtype=float)
        k, a, b = self._modes()
        out = self.a0 * t
        for kk, ak, bk in zip(k, a, b):
            w = TWO_PI * kk
            out = out + ak * np.sin(w * t) / w + bk * (1.0 - np.cos(w * t)) / w
        return out

    def df(self, t):
        t = np.asarray(t, dtype=float)
        k, a, b = self._modes()
        out = np.zeros(t.shape)
        for kk, ak, bk in zip(k, a, b):
            w = TWO_PI * kk
            out = out - ak * w * np.sin(w * t) + bk * w * np.cos(w * t)
        return out

    def describe(self):
        return {"kind": "fourier", "coeffs": {"a0": float(self.a0),
                                              "cos": [float(v) for v in self.cos],
                                              "sin": [float(v) for v in self.sin]}}

    def is_constant(self):
        return not any(self.cos) and not any(self.sin)


class SampledDamping(DampingProfile):
    """Uniform samples f(i/N), i = 0..N-1, interpolated by a periodic cubic spline."""

    def __init__(self, samples: Sequence[float]):
        y = np.asarray(samples, dtype=float)
        if y.ndim != 1 or len(y) < 4:
            raise ParamOutOfRange("sampled damping needs at least 4 samples")
        self.samples = y
        n = len(y)
        nodes = np.linspace(0.0, 1.0, n + 1)
        self._spline = CubicSpline(nodes, np.append(y, y[0]), bc_type="periodic")
        self._anti = self._spline.antiderivative()
        self._deriv = self._spline.derivative()
        self._period_integral = float(self._anti(1.0) - self._anti(0.0))

    def f(self, t):
        t = np.asarray(t, dtype=float)
        return self._spline(np.mod(t, 1.0))

    def F(self, t):
        t = np.asarray(t, dtype=float)
        n = np.floor(t)
        return n * self._period_integral + self._anti(t - n) - self._anti(0.0)

    def df(self, t):
        t = np.asarray(t, dtype=float)
        return self._deriv(np.mod(t, 1.0))

    def describe(self):
        return {"kind": "samples", "samples": [float(v) for v in self.samples]}


class CombinedDamping(DampingProfile):
    """Linear combination sum_i w_i f_i; F follows by superposition."""

    def __init__(self, terms: Sequence[tuple]):
        self.terms = tuple((float(w), p) for w, p in terms)

    def f(self, t):
        return sum(w * p.f(t) for w, p in self.terms)

    def F(self, t):
        return sum(w * p.F(t) for w, p in self.terms)

    def df(self, t):
        return sum(w * p.df(t) for w, p in self.terms)

    def describe(self):
        return {"kind": "sum", "terms": [[w, p.describe()] for w, p in self.terms]}

    def is_constant(self):
        return all(p.is_constant() for _, p in self.terms)


def eval_F(profile: DampingProfile, t: float) -> float:
    return float(profile.F(t))


def mean_damping(profile: DampingProfile, tol_mean: float = 1e-12) -> tuple[float, str]:
    """Return ``([f], class)`` where the class is one of H0_minus / H0_zero / H0_plus."""
    m = profile.mean
    if abs(m) <= tol_mean:
        return m, H0_ZERO
    return m, (H0_MINUS if m > 0 else H0_PLUS)


def damping_from_dict(d: dict) -> DampingProfile:
    kind = d.get("kind")
    if kind == "constant":
        coeffs = d.get("coeffs", [0.0])
        lam = coeffs[0] if isinstance(coeffs, (list, tuple)) else coeffs
        return ConstantDamping(float(lam))
    if kind == "fourier":
        c = d.get("coeffs", {})
        return FourierDamping(float(c.get("a0", 0.0)), tuple(c.get("cos", ())), tuple(c.get("sin", ())))
    if kind == "samples":
        return SampledDamping(d["samples"])
    if kind == "sum":
        return CombinedDamping([(w, damping_from_dict(p)) for w, p in d["terms"]])
    raise ParamOutOfRange(f"unknown damping kind {kind!r}")


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigPotential:
    """V(x, t) = const + sum a cos(2 pi (kx x + kt t)) + b sin(2 pi (kx x + kt t)).

    ``terms`` holds tuples ``(kx, kt, a, b)`` with integer wave numbers, so V
    is 1-periodic in both arguments by construction.
    """

    const: float = 0.0
    terms: tuple = ()

    def _phase(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        for kx, kt, a, b in self.terms:
            yield kx, kt, a, b, TWO_PI * (kx * x + kt * t)

    def V(self, x, t):
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(t)).shape) + self.const
        for _, _, a, b, ph in self._phase(x, t):
            out = out + a * np.cos(ph) + b * np.sin(ph)
        return out

    def V_x(self, x, t):
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(t)).shape)
        for kx, _, a, b, ph in self._phase(x, t):
            out = out + TWO_PI * kx * (b * np.cos(ph) - a * np.sin(ph))
        return out

    def V_t(self, x, t):
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(t)).shape)
        for _, kt, a, b, ph in self._phase(x, t):
            out = out + TWO_PI * kt * (b * np.cos(ph) - a * np.sin(ph))
        return out

    def describe(self):
        return {"kind": "fourier", "const": float(self.const),
                "terms": [[int(kx), int(kt), float(a), float(b)] for kx, kt, a, b in self.terms]}

    @property
    def is_zero(self) -> bool:
        return self.const == 0.0 and all(a == 0 and b == 0 for _, _, a, b in self.terms)

    def c1_norm(self, nx: int = 1024, nt: int = 256) -> float:
        """max(sup|V|, sup|V_x|, sup|V_t|) by dense sampling."""
        x = np.arange(nx)[:, None] / nx
        t = np.arange(nt)[None, :] / nt
        return float(max(np.max(np.abs(self.V(x, t))), np.max(np.abs(self.V_x(x, t))),
                         np.max(np.abs(self.V_t(x, t)))))


def zero_potential() -> TrigPotential:
    return TrigPotential()


def cosine_potential(amplitude: float = 1.0) -> TrigPotential:
    """amplitude * (1 - cos 2 pi x): the pendulum well in period-1 coordinates."""
    return TrigPotential(const=float(amplitude), terms=((1, 0, -float(amplitude), 0.0),))


def potential_from_dict(d: dict) -> TrigPotential:
    kind = d.get("kind", "zero")
    if kind == "zero":
        return zero_potential()
    if kind == "cosine":
        coeffs = d.get("coeffs", [1.0])
        amp = coeffs[0] if isinstance(coeffs, (list, tuple)) else coeffs
        return cosine_potential(float(amp))
    if kind == "fourier":
        c = d.get("coeffs", {})
        terms = tuple((int(kx), int(kt), float(a), float(b)) for kx, kt, a, b in c.get("terms", ()))
        return TrigPotential(float(c.get("const", 0.0)), terms)
    raise ParamOutOfRange(f"unknown potential kind {kind!r}")


# ---------------------------------------------------------------------------
# Lagrangians and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mechanical:
    """H = (p + c)^2 / 2 + V(x, t), hence L = v^2 / 2 - c v - V(x, t)."""

    potential: TrigPotential
    c: float = 0.0

    def lagrangian(self, x, v, t):
        v = np.asarray(v, dtype=float)
        return 0.5 * v * v - self.c * v - self.potential.V(x, t)

    def lagrangian_v(self, x, v, t):
        return np.asarray(v, dtype=float) - self.c + 0.0 * np.asarray(x, dtype=float)

    def hamiltonian(self, x, p, t):
        p = np.asarray(p, dtype=float)
        return 0.5 * (p + self.c) ** 2 + self.potential.V(x, t)

    def describe(self):
        return {"variant": "mechanical", "c": float(self.c), "potential": self.potential.describe()}


@dataclass(frozen=True)
class GenericLagrangian:
    """User supplied Tonelli Lagrangian L(x, v, t).

    ``L`` must accept numpy arrays and broadcast. ``L_v`` is optional; a
    central difference is used when it is missing. ``name`` identifies the
    Lagrangian in model hashes.
    """

    L: Callable
    name: str
    L_v: Optional[Callable] = None

    def lagrangian(self, x, v, t):
        return self.L(x, v, t)

    def lagrangian_v(self, x, v, t):
        if self.L_v is not None:
            return self.L_v(x, v, t)
        h = 1e-6 * max(1.0, abs(float(v)))
        return (self.L(x, v + h, t) - self.L(x, v - h, t)) / (2 * h)

    def hamiltonian(self, x, p, t):
        """Numeric dual: max_v p v - L(x, v, t)."""
        res = optimize.minimize_scalar(lambda v: float(self.L(x, v, t)) - p * v,
                                       bracket=(-1.0, 1.0), tol=1e-12)
        return -float(res.fun)

    def describe(self):
        return {"variant": "generic", "name": self.name}


@dataclass(frozen=True)
class ModelSpec:
    variant: object  # Mechanical | GenericLagrangian
    damping: DampingProfile
    alpha: float = 0.0
    name: str = field(default="model", compare=False)

    @property
    def is_mechanical(self) -> bool:
        return isinstance(self.variant, Mechanical)

    @property
    def c(self) -> float:
        return self.variant.c if self.is_mechanical else 0.0

    def lagrangian(self, x, v, t):
        return self.variant.lagrangian(x, v, t)

    def hamiltonian(self, x, p, t):
        return self.variant.hamiltonian(x, p, t)

    def describe(self) -> dict:
        return {"lagrangian": self.variant.describe(), "damping": self.damping.describe(),
                "alpha": float(self.alpha)}

    @cached_property
    def model_hash(self) -> str:
        """Hash of the Lagrangian and damping (alpha excluded, it is a solve parameter)."""
        d = self.describe()
        d.pop("alpha")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_(self, **changes) -> "ModelSpec":
        """Copy with another damping, alpha or cohomology parameter ``c``."""
        variant = self.variant
        if "c" in changes:
            variant = Mechanical(variant.potential, float(changes.pop("c")))
        kw = dict(variant=variant, damping=self.damping, alpha=self.alpha, name=self.name)
        kw.update(changes)
        return ModelSpec(**kw)


@dataclass(frozen=True)
class LegendreResult:
    L_value: float
    p_star: float


def legendre_transform(model: ModelSpec, x: float, v: float, t: float,
                       convexity_tol: float = 1e-10) -> LegendreResult:
    """Evaluate L and the conjugate momentum p* = L_v at (x, v, t)."""
    var = model.variant
    if isinstance(var, Mechanical):
        return LegendreResult(float(var.lagrangian(x, v, t)), float(v - var.c))
    h = 1e-3 * max(1.0, abs(v))
    l0 = float(var.lagrangian(x, v, t))
    second = float(var.lagrangian(x, v + h, t)) - 2.0 * l0 + float(var.lagrangian(x, v - h, t))
    if second < -convexity_tol * max(1.0, abs(l0)):
        raise NonConvexDetected(f"L is not convex in v near v={v} (second difference {second:.3e})")
    return LegendreResult(l0, float(var.lagrangian_v(x, v, t)))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _spin_orbit_potential(e: float, eps: float) -> TrigPotential:
    # truncated spin-orbit expansion, first order in e beyond the 1:1 term
    w = {1: -0.5 * e, 2: 1.0 - 2.5 * e * e, 3: 3.5 * e}
    return TrigPotential(0.0, tuple((2, -m, -0.5 * eps * wm, 0.0) for m, wm in w.items()))


def tidal_equilibrium_spin(e: float) -> float:
    """Pseudo-synchronous spin rate N(e) / Omega(e) of the constant time-lag tidal model."""
    e2 = e * e
    n = 1 + 7.5 * e2 + 45 / 8 * e2 ** 2 + 5 / 16 * e2 ** 3
    d = (1 + 3 * e2 + 3 / 8 * e2 ** 2) * (1 - e2) ** 1.5
    return n / d


@dataclass(frozen=True)
class SwingField:
    """Second order pumped-swing equation, phi'' = G(phi, phi', t).

    theta(t) = theta0 cos(omega t) is the imposed body angle. The damping-like
    term multiplies phi' by a state dependent factor, so this field is only
    simulated, never fed to the weak KAM solvers.
    """

    l: float
    s: float
    R: float
    theta0: float
    omega: float
    g: float = 9.81
    tonelli_damped: bool = field(default=False, init=False)

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        return (self.theta0 * np.cos(self.omega * t),
                -self.theta0 * self.omega * np.sin(self.omega * t),
                -self.theta0 * self.omega ** 2 * np.cos(self.omega * t))

    def __call__(self, phi, phidot, t):
        th, thd, thdd = self.theta(t)
        l, s, R, g = self.l, self.s, self.R, self.g
        inertia = l * l - 2 * l * s * np.cos(th) + s * s + R * R
        rhs = (-g * l * np.sin(phi) + g * s * np.sin(phi + th) - l * s * np.sin(th) * thd ** 2
               + (l * s * np.cos(th) - s * s - R * R) * thdd - 2 * l * s * np.sin(th) * thd * phidot)
        return np.asarray(phidot, dtype=float), rhs / inertia


def preset_model(name: str, **params):
    """Build one of the physical example models.

    ``pendulum``: lam, amplitude (default 1), c (default 0), alpha.
    ``tidal_torque``: eps, kappa, e (default 0), eta (float or DampingProfile,
    default 1), c (default: pseudo-synchronous rate), alpha.
    ``swing``: l, s, R, theta0, omega, g -> :class:`SwingField`.
    """
    if name == "pendulum":
        amp = float(params.get("amplitude", 1.0))
        if amp < 0:
            raise ParamOutOfRange("pendulum amplitude must be >= 0")
        return ModelSpec(Mechanical(cosine_potential(amp), float(params.get("c", 0.0))),
                         ConstantDamping(float(params.get("lam", 0.2))),
                         float(params.get("alpha", 0.0)), name="pendulum")
    if name == "tidal_torque":
        e = float(params.get("e", 0.0))
        eps = float(params.get("eps", 0.01))
        kappa = float(params.get("kappa", 0.001))
        if not 0.0 <= e < 1.0:
            raise ParamOutOfRange(f"eccentricity must lie in [0, 1), got {e}")
        if eps < 0 or kappa < 0:
            raise ParamOutOfRange("eps and kappa must be nonnegative")
        eta = params.get("eta", 1.0)
        if isinstance(eta, DampingProfile):
            damping = CombinedDamping([(kappa, eta)])
        else:
            damping = ConstantDamping(kappa * float(eta))
        c = float(params["c"]) if "c" in params else tidal_equilibrium_spin(e)
        return ModelSpec(Mechanical(_spin_orbit_potential(e, eps), c), damping,
                         float(params.get("alpha", 0.0)), name="tidal_torque")
    if name == "swing":
        kw = {k: float(params[k]) for k in ("l", "s", "R", "theta0", "omega") if k in params}
        missing = {"l", "s", "R", "theta0", "omega"} - set(kw)
        if missing:
            raise ParamOutOfRange(f"swing preset missing {sorted(missing)}")
        if kw["l"] <= 0 or kw["s"] < 0 or kw["R"] < 0:
            raise ParamOutOfRange("swing needs l > 0, s >= 0, R >= 0")
        if kw["R"] == 0 and kw["s"] == kw["l"]:
            raise ParamOutOfRange("swing inertia vanishes for R = 0 and s = l")
        return SwingField(g=float(params.get("g", 9.81)), **kw)
    raise UnknownPreset(f"unknown preset {name!r}")

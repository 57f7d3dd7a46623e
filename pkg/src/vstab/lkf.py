"""Lyapunov-Krasovskii functional candidates and their derivatives.

Integrals over a history are computed segment by segment with 10-node
Gauss-Legendre rules and adaptive bisection. Driver and Dini derivatives
are estimated from difference quotients on a decreasing step sequence
followed by first-order Richardson extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.integrate import quad

from . import comparison as cf
from .comparison import ComparisonFn, Kind
from .dynamics import DelaySystem, InputSignal, Trajectory, integrate, window
from .errors import ComparisonClassError, ConfigError, DelayMismatch, DivergentIntegrand
from .history import HistoryFunction, hermite_coeffs, pseudotrajectory
from .reports import CheckReport, Violation

QUAD_TOL = 1e-10
DEFAULT_H = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)

PointMap = Callable[[np.ndarray], np.ndarray]


def squared_norm(x: np.ndarray) -> np.ndarray:
    """``|x|^2`` row-wise for an ``(N, n)`` array."""
    return np.sum(np.asarray(x) ** 2, axis=-1)


# ---------------------------------------------------------------- families

@dataclass(frozen=True)
class QuadExp:
    """``kappa |phi(0)|^2 + int e^{c s} |phi(s)|^2 ds``."""

    c: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.c < 0 or self.kappa <= 0:
            raise ConfigError("quadratic-exponential family needs c >= 0 and kappa > 0")


@dataclass(frozen=True)
class WeightedIntegral:
    """``kappa w1(phi(0)) + int e^{c s} w2(phi(s)) ds``."""

    w1: PointMap
    w2: PointMap
    c: float = 0.0
    kappa: float = 1.0


@dataclass(frozen=True)
class Opaque:
    note: str = ""


Family = Union[QuadExp, WeightedIntegral, Opaque]


@dataclass(frozen=True)
class LKFCandidate:
    """A functional ``V`` on histories with its sandwich pair."""

    evaluator: Callable[[HistoryFunction], float]
    psi1: ComparisonFn | None
    psi2: ComparisonFn | None
    theta: float = 1.0
    family: Family = field(default_factory=Opaque)
    name: str = "V"

    def __call__(self, phi: HistoryFunction) -> float:
        return eval_lkf(self, phi)

    def head_and_weights(self):
        """``(kappa, w1, w2, c)`` for structured families, else ``None``."""
        fam = self.family
        if isinstance(fam, QuadExp):
            return fam.kappa, squared_norm, squared_norm, fam.c
        if isinstance(fam, WeightedIntegral):
            return fam.kappa, fam.w1, fam.w2, fam.c
        return None

    def to_dict(self) -> dict:
        fam = self.family
        d = {"name": self.name, "theta": self.theta, "family": type(fam).__name__}
        if isinstance(fam, (QuadExp, WeightedIntegral)):
            d.update(c=fam.c, kappa=fam.kappa)
        return d


# ---------------------------------------------------------------- quadrature

def _gl_on(coef, t0, h, lo, hi, c, w2):
    """GL10 of ``e^{c s} w2(p(s))`` on ``[lo, hi]`` for cubic pieces (vectorized)."""
    half = 0.5 * (hi - lo)
    s = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_X[None, :]    # (P, 10)
    u = (s - t0[:, None]) / h[:, None]
    a0, a1, a2, a3 = (cc[:, None, :] for cc in coef)                   # (P, 1, n)
    uu = u[:, :, None]
    vals = a0 + uu * (a1 + uu * (a2 + uu * a3))                          # (P, 10, n)
    g = np.asarray(w2(vals.reshape(-1, vals.shape[-1])), dtype=float).reshape(s.shape)
    if c != 0.0:
        g = g * np.exp(c * s)
    return half * (g @ _GL_W)


def integrate_hermite(taus, values, slopes, c: float, w2: PointMap, a: float | None = None,
                      b: float | None = None, tol: float = QUAD_TOL, max_depth: int = 40) -> float:
    """``int_a^b e^{c s} w2(x(s)) ds`` over Hermite data (default: whole span)."""
    taus = np.asarray(taus, dtype=float)
    a = taus[0] if a is None else a
    b = taus[-1] if b is None else b
    h_all = np.diff(taus)
    y0, y1 = values[:-1], values[1:]
    coef_all = hermite_coeffs(y0, y1, slopes[:, 0], slopes[:, 1], h_all[:, None])
    lo = np.maximum(taus[:-1], a)
    hi = np.minimum(taus[1:], b)
    idx = np.flatnonzero(hi > lo)
    lo, hi = lo[idx], hi[idx]
    total = 0.0
    whole = _gl_on(tuple(cc[idx] for cc in coef_all), taus[idx], h_all[idx], lo, hi, c, w2)
    depth = 0
    while idx.size:
        mid = 0.5 * (lo + hi)
        coef = tuple(cc[idx] for cc in coef_all)
        left = _gl_on(coef, taus[idx], h_all[idx], lo, mid, c, w2)
        right = _gl_on(coef, taus[idx], h_all[idx], mid, hi, c, w2)
        err = np.abs(left + right - whole)
        # tolerance is shared out in proportion to the piece length
        ok = (err <= tol * np.maximum((hi - lo) / max(b - a, 1e-300), 1e-3)) | (depth >= max_depth)
        total += float(np.sum((left + right)[ok]))
        bad = ~ok
        idx = np.concatenate([idx[bad], idx[bad]])
        lo, hi = np.concatenate([lo[bad], mid[bad]]), np.concatenate([mid[bad], hi[bad]])
        whole = np.concatenate([left[bad], right[bad]])
        depth += 1
    return total


def weighted_integral(phi: HistoryFunction, c: float, w2: PointMap = squared_norm) -> float:
    """``int_{-theta}^0 e^{c s} w2(phi(s)) ds``."""
    return integrate_hermite(phi.taus, phi.values, phi.slopes, c, w2)


# ---------------------------------------------------------------- constructors

def quad_exp(c: float = 0.0, kappa: float = 1.0, theta: float = 1.0) -> LKFCandidate:
    """Quadratic-exponential functional with its natural sandwich pair."""
    fam = QuadExp(float(c), float(kappa))
    mass = theta if c == 0 else (1.0 - math.exp(-c * theta)) / c
    return LKFCandidate(lambda phi: _structured_value(fam.kappa, squared_norm, squared_norm, fam.c, phi),
                        cf.power(2.0, kappa), cf.power(2.0, kappa + mass), theta, fam,
                        f"quadexp(c={c:g},kappa={kappa:g})")


def exponential_trick(w1: PointMap, w2: PointMap, c: float, kappa: float, theta: float = 1.0,
                      psi1: ComparisonFn | None = None, psi2: ComparisonFn | None = None) -> LKFCandidate:
    """``W_{c,kappa}(phi) = kappa w1(phi(0)) + int e^{c s} w2(phi(s)) ds``."""
    fam = WeightedIntegral(w1, w2, float(c), float(kappa))
    return LKFCandidate(lambda phi: _structured_value(fam.kappa, w1, w2, fam.c, phi),
                        psi1, psi2, theta, fam, f"weighted(c={c:g},kappa={kappa:g})")


def opaque(evaluator: Callable[[HistoryFunction], float], psi1=None, psi2=None,
           theta: float = 1.0, name: str = "opaque") -> LKFCandidate:
    return LKFCandidate(evaluator, psi1, psi2, theta, Opaque(), name)


def sup_norm_lkf(theta: float = 1.0) -> LKFCandidate:
    """``V(phi) = ||phi||``."""
    return opaque(lambda phi: phi.sup_norm(), cf.identity(), cf.identity(), theta, "sup-norm")


def _structured_value(kappa, w1, w2, c, phi: HistoryFunction) -> float:
    head = float(np.asarray(w1(phi.values[-1][None, :])).ravel()[0])
    return kappa * head + weighted_integral(phi, c, w2)


def eval_lkf(V: LKFCandidate, phi: HistoryFunction) -> float:
    if abs(phi.theta - V.theta) > 1e-12:
        raise DelayMismatch(f"history delay {phi.theta} differs from functional delay {V.theta}")
    return float(V.evaluator(phi))


# ---------------------------------------------------------------- along trajectories

def lkf_along(V: LKFCandidate, traj: Trajectory, ts: Sequence[float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``V(x_t)`` at the times ``ts`` (default: every solver breakpoint)."""
    if abs(traj.system.theta - V.theta) > 1e-12:
        raise DelayMismatch("trajectory delay differs from functional delay")
    ts = traj.step_times() if ts is None else np.asarray(ts, dtype=float)
    struct = V.head_and_weights()
    theta = V.theta
    if struct is None or (ts.size and struct[3] * max(abs(traj.times[0]), traj.t_end) > 600):
        return ts, np.array([eval_lkf(V, window(traj, float(t))) for t in ts])
    kappa, w1, w2, c = struct
    times, values, slopes = traj.times, traj.values, traj.slopes
    h = np.diff(times)
    coef = hermite_coeffs(values[:-1], values[1:], slopes[:, 0], slopes[:, 1], h[:, None])
    seg = _gl_on(coef, times[:-1], h, times[:-1].copy(), times[1:].copy(), c, w2)
    prefix = np.concatenate([[0.0], np.cumsum(seg)])

    def cumulative(tq):
        # int_{times[0]}^t e^{c s} w2 ds for every t in tq
        k = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, times.size - 2)
        out = prefix[k].copy()
        inside = tq > times[k]
        if inside.any():
            kk = k[inside]
            out[inside] += _gl_on(tuple(cc[kk] for cc in coef), times[kk], h[kk],
                                  times[kk].copy(), tq[inside].copy(), c, w2)
        return out

    heads = np.asarray(w1(traj.eval(ts).reshape(ts.size, -1)), dtype=float).ravel()
    integral = cumulative(ts) - cumulative(ts - theta)
    out = kappa * heads + (np.exp(-c * ts) * integral if c else integral)
    return ts, out


# ---------------------------------------------------------------- sandwich

def sandwich_check(V: LKFCandidate, space, coercive: bool = False, rtol: float = 1e-9) -> CheckReport:
    """Sampled test of ``psi1(|phi(0)|) <= V(phi) <= psi2(||phi||)``.

    With ``coercive`` the lower bound uses ``||phi||`` instead; the
    report's ``details["regime"]`` says which lower bound was tested.
    """
    if V.psi1 is None or V.psi2 is None:
        raise ConfigError("sandwich check needs both psi1 and psi2")
    report = CheckReport("sandwich-coercive" if coercive else "sandwich")
    for i in range(space.sample_count):
        phi = space.history(i)
        v = eval_lkf(V, phi)
        norm = phi.sup_norm()
        lo_arg = norm if coercive else float(np.linalg.norm(phi.values[-1]))
        lo, hi = float(V.psi1(lo_arg)), float(V.psi2(norm))
        slack = rtol * max(1.0, abs(v))
        margin = max(lo - v, v - hi)
        report.record(margin)
        if margin > slack:
            report.add(Violation(i, phi.to_csv(), [], v, lo if lo - v > v - hi else hi,
                                 {"side": "lower" if lo - v > v - hi else "upper"}))
    report.details["regime"] = "coercive" if coercive else "pointwise"
    return report.finalize()


# ---------------------------------------------------------------- derivatives

@dataclass
class DerivativeEstimate:
    """Difference quotients and their extrapolated limit.

    ``tol`` is the gap between the last two Richardson values (or the
    last two raw quotients when fewer steps are available). ``upper``
    is the largest quotient, a crude stand-in for the limsup.
    """

    hs: list
    quotients: list
    limit: float
    tol: float
    converged: bool
    upper: float

    def to_dict(self) -> dict:
        return {"h": self.hs, "quotients": self.quotients, "limit": self.limit, "tol": self.tol,
                "converged": self.converged, "upper": self.upper}


def _check_hs(h_seq: Sequence[float], theta: float) -> list[float]:
    hs = [float(h) for h in h_seq]
    if len(hs) < 2 or any(not 0 < h < theta for h in hs) or any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("h sequence must be strictly decreasing inside (0, theta) with >= 2 entries")
    return hs


def extrapolate(hs: Sequence[float], q: Sequence[float], noise: float = 1e-8) -> DerivativeEstimate:
    """First-order Richardson extrapolation of quotients ``q`` taken at steps ``hs``."""
    hs, q = list(hs), [float(v) for v in q]
    rich = []
    for (h0, q0), (h1, q1) in zip(zip(hs, q), zip(hs[1:], q[1:])):
        r = h0 / h1
        rich.append((r * q1 - q0) / (r - 1.0))
    limit = rich[-1]
    tol = abs(rich[-1] - rich[-2]) if len(rich) >= 2 else abs(q[-1] - q[-2])
    diffs = np.abs(np.diff(q))
    floor = noise * max(1.0, max(abs(v) for v in q))
    converged = all(d1 <= d0 or d1 <= floor for d0, d1 in zip(diffs, diffs[1:]))
    if not all(np.isfinite(q)):
        converged = False
    return DerivativeEstimate(hs, q, float(limit), float(tol), bool(converged), float(max(q)))


def driver_derivative(V: LKFCandidate, phi: HistoryFunction, drift, h_seq: Sequence[float] = DEFAULT_H,
                      v0: float | None = None) -> DerivativeEstimate:
    """Difference quotients of ``V`` along the frozen-drift pseudotrajectory."""
    hs = _check_hs(h_seq, phi.theta)
    base = eval_lkf(V, phi) if v0 is None else v0
    q = [(eval_lkf(V, pseudotrajectory(phi, drift, h)) - base) / h for h in hs]
    return extrapolate(hs, q)


def dini_derivative(sys: DelaySystem, V: LKFCandidate, phi: HistoryFunction, u,
                    h_seq: Sequence[float] = DEFAULT_H) -> DerivativeEstimate:
    """Difference quotients of ``V`` along the true solution from ``phi``.

    ``u`` is an :class:`InputSignal` or a constant input value. A blow-up
    inside the short solve propagates as a non-finite quotient.
    """
    hs = _check_hs(h_seq, phi.theta)
    if not isinstance(u, InputSignal):
        u = InputSignal.constant(np.atleast_1d(np.asarray(u, dtype=float)))
    base = eval_lkf(V, phi)
    q = []
    for h in hs:
        traj = integrate(sys, phi, u, h, step=h / 4.0)
        if traj.escaped:
            q.append(math.inf)
            continue
        q.append((eval_lkf(V, window(traj, h)) - base) / h)
    return extrapolate(hs, q)


# ---------------------------------------------------------------- transforms

def build_scaling(sigma: ComparisonFn, psi1: ComparisonFn, domain_cap: float = 100.0,
                  knots: int = 200) -> ComparisonFn:
    """``xi(r) = int_0^r ds / sigma(psi1^{-1}(s))`` with a cached antiderivative.

    The knot table is geometric on ``[1e-8, domain_cap]``; evaluations
    add a single quadrature from the nearest knot below.
    """
    inv = cf.inverse(psi1)

    def integrand(s):
        val = float(sigma(float(inv(s))))
        if not (val > 0 and math.isfinite(val)):
            raise DivergentIntegrand(f"sigma(psi1^-1(s)) = {val} at s={s}")
        return 1.0 / val

    grid = np.concatenate([[0.0], np.geomspace(1e-8, domain_cap, knots)])
    table = np.zeros_like(grid)
    for i in range(1, grid.size):
        val, _ = quad(integrand, grid[i - 1], grid[i], epsabs=1e-14, epsrel=1e-13, limit=200)
        table[i] = table[i - 1] + val
    if not np.all(np.isfinite(table)):
        raise DivergentIntegrand("scaling integral diverged on the knot grid")

    def xi_scalar(r: float) -> float:
        if r <= 0:
            return 0.0
        k = int(np.searchsorted(grid, r, side="right") - 1)
        k = min(k, grid.size - 1)
        if grid[k] == r:
            return float(table[k])
        val, _ = quad(integrand, grid[k], r, epsabs=1e-14, epsrel=1e-13, limit=200)
        return float(table[k] + val)

    def xi(r):
        r = np.asarray(r, dtype=float)
        if r.ndim == 0:
            return np.asarray(xi_scalar(float(r)))
        return np.array([xi_scalar(float(v)) for v in r.ravel()]).reshape(r.shape)

    out = ComparisonFn(xi, Kind.KINF, domain_cap, f"scaling({sigma.name},{psi1.name})")
    # sampled certification on a modest grid (quadrature per point)
    vals = out(np.linspace(0.0, domain_cap, 200))
    if vals[0] != 0.0 or np.any(np.diff(vals) <= 0):
        raise ComparisonClassError("scaling function failed its increase check")
    return out


def scale_lkf(V: LKFCandidate, xi: ComparisonFn) -> LKFCandidate:
    """``W = xi o V`` with sandwich pair ``(xi o psi1, xi o psi2)``."""
    ev = V.evaluator
    p1 = cf.compose(xi, V.psi1) if V.psi1 is not None else None
    p2 = cf.compose(xi, V.psi2) if V.psi2 is not None else None
    return LKFCandidate(lambda phi: float(xi(float(ev(phi)))), p1, p2, V.theta, Opaque("scaled"),
                        f"{xi.name}o{V.name}")


def dissipative_to_implication(alpha: ComparisonFn, chi: ComparisonFn) -> tuple[ComparisonFn, ComparisonFn]:
    """``(chi', alpha') = (alpha^{-1} o 2 chi, alpha / 2)``."""
    alpha_p = cf.scaled(0.5, alpha)
    if chi.is_zero:
        return cf.zero(chi.domain_cap), alpha_p
    return cf.compose(cf.inverse(alpha), cf.scaled(2.0, chi)), alpha_p

"""Piecewise cubic Hermite histories on ``[-theta, 0]``.

A history is stored as breakpoints ``taus`` (``K+1``), values at the
breakpoints ``values`` (``K+1 x n``) and per-segment end slopes
``slopes`` (``K x 2 x n``; start and end derivative). Allowing the two
slopes at a shared breakpoint to differ lets the representation carry
kinks while staying continuous.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BadStep, ConfigError, OutOfDomain

DOMAIN_TOL = 1e-12
CONTINUITY_TOL = 1e-10


def hermite_coeffs(y0, y1, m0, m1, h):
    """Power-basis coefficients of the cubic in the local variable ``u = (t - t0) / h``."""
    a0 = y0
    a1 = h * m0
    a2 = -3.0 * y0 - 2.0 * h * m0 + 3.0 * y1 - h * m1
    a3 = 2.0 * y0 + h * m0 - 2.0 * y1 + h * m1
    return a0, a1, a2, a3


@dataclass(frozen=True, eq=False)
class HistoryFunction:
    """Continuous piecewise cubic map ``[-theta, 0] -> R^n``."""

    taus: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        values = np.asarray(self.values, dtype=float)
        slopes = np.asarray(self.slopes, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if slopes.ndim == 2:
            slopes = slopes[:, :, None]
        k = taus.size - 1
        if k < 1 or values.shape[0] != k + 1 or slopes.shape[:2] != (k, 2):
            raise ConfigError("inconsistent history segment arrays")
        if slopes.shape[2] != values.shape[1]:
            raise ConfigError("history slope and value dimensions differ")
        if np.any(np.diff(taus) <= 0):
            raise ConfigError("history breakpoints must be strictly increasing")
        if abs(taus[-1]) > DOMAIN_TOL or taus[0] >= 0:
            raise ConfigError("history must live on [-theta, 0]")
        taus = taus.copy()
        taus[-1] = 0.0
        for name, arr in (("taus", taus), ("values", values), ("slopes", slopes)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # ------------------------------------------------------------ basics
    @property
    def theta(self) -> float:
        return float(-self.taus[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_segments(self) -> int:
        return int(self.taus.size - 1)

    def __call__(self, tau):
        return self.eval(tau)

    def _locate(self, tau: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.taus, tau, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def _check_domain(self, tau: np.ndarray) -> np.ndarray:
        if np.any(tau < self.taus[0] - DOMAIN_TOL) or np.any(tau > DOMAIN_TOL):
            bad = tau[(tau < self.taus[0] - DOMAIN_TOL) | (tau > DOMAIN_TOL)]
            raise OutOfDomain(f"tau={bad.ravel()[0]:.6g} outside [{self.taus[0]:.6g}, 0]")
        return np.clip(tau, self.taus[0], 0.0)

    def coefficients(self) -> tuple[np.ndarray, ...]:
        """Per-segment power coefficients ``(a0, a1, a2, a3)``, each ``K x n``."""
        h = np.diff(self.taus)[:, None]
        return hermite_coeffs(self.values[:-1], self.values[1:],
                              self.slopes[:, 0], self.slopes[:, 1], h)

    def eval(self, tau):
        """Value at ``tau``; scalar input gives an ``(n,)`` array, array input ``(..., n)``."""
        t = self._check_domain(np.asarray(tau, dtype=float))
        idx = self._locate(t)
        t0 = self.taus[idx]
        h = self.taus[idx + 1] - t0
        u = ((t - t0) / h)[..., None]
        a0, a1, a2, a3 = hermite_coeffs(self.values[idx], self.values[idx + 1],
                                        self.slopes[idx, 0], self.slopes[idx, 1], h[..., None])
        return a0 + u * (a1 + u * (a2 + u * a3))

    def derivative(self, tau):
        """Right derivative at ``tau`` (left derivative at ``0``)."""
        t = self._check_domain(np.asarray(tau, dtype=float))
        idx = self._locate(t)
        t0 = self.taus[idx]
        h = self.taus[idx + 1] - t0
        u = ((t - t0) / h)[..., None]
        _, a1, a2, a3 = hermite_coeffs(self.values[idx], self.values[idx + 1],
                                       self.slopes[idx, 0], self.slopes[idx, 1], h[..., None])
        return (a1 + u * (2.0 * a2 + 3.0 * u * a3)) / h[..., None]

    def head(self) -> np.ndarray:
        """``phi(0)``."""
        return self.values[-1].copy()

    def tail(self) -> np.ndarray:
        """``phi(-theta)``."""
        return self.values[0].copy()

    # ------------------------------------------------------------ norms
    def sup_norm(self) -> float:
        """Exact ``max_tau |phi(tau)|`` (Euclidean in R^n)."""
        best = float(np.max(np.linalg.norm(self.values, axis=1)))
        a0, a1, a2, a3 = self.coefficients()
        if self.dim == 1:
            a1, a2, a3 = a1[:, 0], a2[:, 0], a3[:, 0]
            a0 = a0[:, 0]
            # roots of 3 a3 u^2 + 2 a2 u + a1
            qa, qb, qc = 3.0 * a3, 2.0 * a2, a1
            cands = []
            lin = np.abs(qa) <= 1e-14 * (np.abs(qb) + np.abs(qc) + 1e-300)
            with np.errstate(divide="ignore", invalid="ignore"):
                cands.append(np.where(lin & (qb != 0), -qc / qb, np.nan))
                disc = qb * qb - 4.0 * qa * qc
                sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
                # numerically stable quadratic roots
                q = -0.5 * (qb + np.copysign(sq, qb))
                cands.append(np.where(~lin, q / qa, np.nan))
                cands.append(np.where(~lin & (q != 0), qc / q, np.nan))
            for u in cands:
                ok = np.isfinite(u) & (u > 0) & (u < 1)
                if np.any(ok):
                    uu = u[ok]
                    val = a0[ok] + uu * (a1[ok] + uu * (a2[ok] + uu * a3[ok]))
                    best = max(best, float(np.max(np.abs(val))))
            return best
        for k in range(self.n_segments):
            c = np.stack([a3[k], a2[k], a1[k], a0[k]])  # highest degree first, (4, n)
            sq = sum(np.polymul(c[:, j], c[:, j]) for j in range(self.dim))
            d = np.polyder(sq)
            if not np.any(d):
                continue
            for r in np.roots(np.trim_zeros(d, "f")):
                if abs(r.imag) < 1e-9 and 0 < r.real < 1:
                    best = max(best, float(np.sqrt(max(np.polyval(sq, r.real), 0.0))))
        return best

    def max_jump(self) -> float:
        """Largest slope mismatch between adjacent segments (kink size)."""
        if self.n_segments < 2:
            return 0.0
        return float(np.max(np.abs(self.slopes[1:, 0] - self.slopes[:-1, 1])))

    # ------------------------------------------------------------ reshaping
    def restrict(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Hermite data of the restriction to ``[a, b]`` (absolute taus, not shifted)."""
        a = float(self._check_domain(np.asarray(a)))
        b = float(self._check_domain(np.asarray(b)))
        if not b > a:
            raise ConfigError("restriction needs a < b")
        return restrict_hermite(self.taus, self.values, self.slopes, a, b)

    def map_values(self, scale: float) -> HistoryFunction:
        """``scale * phi``."""
        return HistoryFunction(self.taus, scale * self.values, scale * self.slopes)

    def __mul__(self, k: float) -> HistoryFunction:
        return self.map_values(float(k))

    __rmul__ = __mul__

    def __neg__(self) -> HistoryFunction:
        return self.map_values(-1.0)

    def dense_samples(self, per_segment: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Sample points and values, including all breakpoints."""
        u = np.linspace(0.0, 1.0, per_segment + 1)[:-1]
        t = (self.taus[:-1, None] + np.diff(self.taus)[:, None] * u[None, :]).ravel()
        t = np.append(t, 0.0)
        return t, self.eval(t)

    def continuity_defect(self) -> float:
        """Always zero by construction (values are shared); kept for invariant checks."""
        a0, a1, a2, a3 = self.coefficients()
        end = a0 + a1 + a2 + a3
        return float(np.max(np.abs(end - self.values[1:])))

    # ------------------------------------------------------------ serialization
    def to_csv(self) -> str:
        """Rows ``tau, x_1..x_n, dx_1..dx_n``; kinks produce a left then a right row."""
        rows = []
        n = self.dim
        k = self.n_segments
        for i in range(k + 1):
            left = self.slopes[i - 1, 1] if i > 0 else None
            right = self.slopes[i, 0] if i < k else None
            if left is not None and right is not None and np.array_equal(left, right):
                rows.append(np.concatenate([[self.taus[i]], self.values[i], right]))
                continue
            for d in (left, right):
                if d is not None:
                    rows.append(np.concatenate([[self.taus[i]], self.values[i], d]))
        buf = io.StringIO()
        header = ",".join(["tau"] + [f"x{j + 1}" for j in range(n)] + [f"dx{j + 1}" for j in range(n)])
        np.savetxt(buf, np.array(rows), delimiter=",", fmt="%.17g", header=header, comments="")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> HistoryFunction:
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        n = (data.shape[1] - 1) // 2
        taus, values, slopes = [], [], []
        pending_right = None
        for row in data:
            t, x, d = row[0], row[1:1 + n], row[1 + n:]
            if taus and t == taus[-1]:
                pending_right = d  # second row at a kink is the right derivative
                continue
            if taus:
                slopes.append((pending_right, d))
            taus.append(t)
            values.append(x)
            pending_right = d
        return cls(np.array(taus), np.array(values),
                   np.array([[s, e] for s, e in slopes]))

    def to_dict(self) -> dict:
        return {"taus": self.taus.tolist(), "values": self.values.tolist(),
                "slopes": self.slopes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> HistoryFunction:
        return cls(np.array(d["taus"]), np.array(d["values"]), np.array(d["slopes"]))


def restrict_hermite(taus, values, slopes, a: float, b: float):
    """Cut Hermite data at ``a < b`` and keep the covered part (exact for cubics)."""
    taus = np.asarray(taus)
    k = taus.size - 1
    i0 = int(np.clip(np.searchsorted(taus, a, side="right") - 1, 0, k - 1))
    i1 = int(np.clip(np.searchsorted(taus, b, side="left") - 1, 0, k - 1))
    i1 = max(i1, i0)
    new_t, new_v, new_s = [], [], []
    for i in range(i0, i1 + 1):
        t0, t1 = taus[i], taus[i + 1]
        lo, hi = max(a, t0), min(b, t1)
        if hi <= lo:
            continue
        h = t1 - t0
        c = hermite_coeffs(values[i], values[i + 1], slopes[i, 0], slopes[i, 1], h)

        def val(t):
            u = (t - t0) / h
            return c[0] + u * (c[1] + u * (c[2] + u * c[3]))

        def der(t):
            u = (t - t0) / h
            return (c[1] + u * (2 * c[2] + 3 * u * c[3])) / h

        if not new_t:
            new_t.append(lo)
            new_v.append(values[i] if lo == t0 else val(lo))
        new_t.append(hi)
        new_v.append(values[i + 1] if hi == t1 else val(hi))
        new_s.append((slopes[i, 0] if lo == t0 else der(lo),
                      slopes[i, 1] if hi == t1 else der(hi)))
    return np.array(new_t), np.array(new_v), np.array([[s, e] for s, e in new_s])


def from_hermite(taus, values, slopes) -> HistoryFunction:
    return HistoryFunction(np.asarray(taus), np.asarray(values), np.asarray(slopes))


def from_samples(taus: Sequence[float], values, derivs) -> HistoryFunction:
    """Smooth Hermite history from breakpoint values and derivatives."""
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    derivs = np.asarray(derivs, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
        derivs = derivs[:, None]
    slopes = np.stack([derivs[:-1], derivs[1:]], axis=1)
    return HistoryFunction(taus, values, slopes)


def from_function(f: Callable, theta: float, segments: int = 64,
                  derivative: Callable | None = None) -> HistoryFunction:
    """Hermite fit of an analytic history sampled on ``segments`` uniform pieces.

    ``f`` maps an array of taus to values (shape ``(N,)`` or ``(N, n)``).
    Without ``derivative`` the slopes come from central differences.
    """
    if theta <= 0:
        raise ConfigError("theta must be positive")
    taus = np.linspace(-theta, 0.0, segments + 1)
    vals = np.asarray(f(taus), dtype=float)
    if derivative is not None:
        ders = np.asarray(derivative(taus), dtype=float)
    else:
        eps = 1e-6 * theta
        lo = np.maximum(taus - eps, -theta)
        hi = np.minimum(taus + eps, 0.0)
        step = (hi - lo).reshape((-1,) + (1,) * (vals.ndim - 1))
        ders = (np.asarray(f(hi), dtype=float) - np.asarray(f(lo), dtype=float)) / step
    vals = np.broadcast_to(vals, taus.shape + vals.shape[1:])
    ders = np.broadcast_to(ders, vals.shape)
    return from_samples(taus, vals, ders)


def constant(value, theta: float = 1.0) -> HistoryFunction:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return HistoryFunction(np.array([-theta, 0.0]), np.stack([v, v]),
                           np.zeros((1, 2, v.size)))


def linear(a, b, theta: float = 1.0) -> HistoryFunction:
    """``phi(s) = a + b s``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return HistoryFunction(np.array([-theta, 0.0]), np.stack([a - theta * b, a]),
                           np.stack([b, b])[None])


def piecewise_linear(taus: Sequence[float], values) -> HistoryFunction:
    """Polygonal history through ``(taus, values)``."""
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    d = np.diff(values, axis=0) / np.diff(taus)[:, None]
    return HistoryFunction(taus, values, np.stack([d, d], axis=1))


def concatenate(parts: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]):
    """Join consecutive Hermite pieces that share endpoints."""
    taus = [parts[0][0]]
    values = [parts[0][1]]
    slopes = [parts[0][2]]
    for t, v, s in parts[1:]:
        taus.append(t[1:])
        values.append(v[1:])
        slopes.append(s)
    return np.concatenate(taus), np.concatenate(values), np.concatenate(slopes)


def pseudotrajectory(phi: HistoryFunction, drift, h: float) -> HistoryFunction:
    """Shift ``phi`` left by ``h`` and continue linearly with slope ``drift``.

    ``phi_h(tau) = phi(tau + h)`` on ``[-theta, -h]`` and
    ``phi(0) + (tau + h) * drift`` on ``[-h, 0]``.
    """
    theta = phi.theta
    if not 0.0 < h < theta:
        raise BadStep(f"step h={h} outside (0, {theta})")
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (phi.dim,))
    t, v, s = phi.restrict(-theta + h, 0.0)
    t = t - h
    t[0] = -theta
    head = phi.values[-1]
    lin = (np.array([-h, 0.0]), np.stack([head, head + h * drift]),
           np.stack([drift, drift])[None])
    return HistoryFunction(*concatenate([(t, v, s), lin]))

"""Comparison functions of classes K, K-infinity, L, PD and KL.

Evaluators are opaque callables; class membership is certified by dense
sampling on ``[0, domain_cap]`` rather than proved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import ComparisonClassError, KindMismatch, NoBracket, NonMonotoneTimes

ArrayLike = Union[float, np.ndarray]

DEFAULT_CAP = 1e6
INVERT_RTOL = 1e-10


class Kind(str, enum.Enum):
    K = "K"
    KINF = "Kinf"
    L = "L"
    PD = "PD"


# (outer, inner) -> class of outer∘inner
_COMPOSE_TABLE = {
    (Kind.K, Kind.K): Kind.K,
    (Kind.K, Kind.KINF): Kind.K,
    (Kind.KINF, Kind.K): Kind.K,
    (Kind.KINF, Kind.KINF): Kind.KINF,
    (Kind.L, Kind.KINF): Kind.L,
    (Kind.K, Kind.L): Kind.L,
    (Kind.KINF, Kind.L): Kind.L,
    (Kind.PD, Kind.K): Kind.PD,
    (Kind.PD, Kind.KINF): Kind.PD,
    (Kind.K, Kind.PD): Kind.PD,
    (Kind.KINF, Kind.PD): Kind.PD,
}


def _certification_grid(cap: float, n: int) -> np.ndarray:
    half = n // 2
    lin = np.linspace(0.0, cap, n - half)
    geo = np.geomspace(min(1e-9, cap * 1e-9), cap, half)
    return np.unique(np.concatenate([lin, geo]))


@dataclass(frozen=True)
class ComparisonFn:
    """A scalar comparison function ``R+ -> R+`` tagged with its class.

    ``func`` must accept numpy arrays. ``is_zero`` marks the identically
    zero function, which is admitted wherever a gain may vanish.
    """

    func: Callable[[np.ndarray], np.ndarray]
    kind: Kind
    domain_cap: float = DEFAULT_CAP
    name: str = ""
    is_zero: bool = False
    inverse_func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    params: Mapping = field(default_factory=dict, compare=False)

    def __call__(self, s: ArrayLike) -> ArrayLike:
        arr = np.asarray(s, dtype=float)
        out = np.asarray(self.func(arr), dtype=float)
        if arr.ndim == 0:
            return float(out)
        return np.broadcast_to(out, arr.shape).copy()

    def __mul__(self, k: float) -> ComparisonFn:
        return scaled(k, self)

    __rmul__ = __mul__

    def __add__(self, other: ComparisonFn) -> ComparisonFn:
        return add(self, other)

    def certify(self, n: int = 10_000, decay_ratio: float = 1e-3) -> ComparisonFn:
        """Check the class invariants on a dense grid; return ``self`` or raise."""
        grid = _certification_grid(self.domain_cap, n)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = self(grid)
        if not np.all(np.isfinite(vals)):
            raise ComparisonClassError(f"{self.name or self.kind}: non-finite values on [0, {self.domain_cap}]")
        if np.any(vals < 0):
            raise ComparisonClassError(f"{self.name or self.kind}: negative values")
        if self.is_zero:
            if np.any(vals != 0):
                raise ComparisonClassError("zero-flagged function is not identically zero")
            return self
        if self.kind in (Kind.K, Kind.KINF, Kind.PD) and abs(vals[0]) > 1e-12:
            raise ComparisonClassError(f"{self.name or self.kind}: f(0) = {vals[0]} != 0")
        if self.kind in (Kind.K, Kind.KINF):
            bad = np.flatnonzero(np.diff(vals) <= 0)
            if bad.size:
                i = bad[0]
                raise ComparisonClassError(
                    f"{self.name or self.kind}: not strictly increasing near s={grid[i]:.6g}")
        elif self.kind is Kind.L:
            bad = np.flatnonzero(np.diff(vals) >= 0)
            if bad.size:
                i = bad[0]
                raise ComparisonClassError(
                    f"{self.name or 'L'}: not strictly decreasing near s={grid[i]:.6g}")
            if not vals[-1] < vals[0] * decay_ratio:
                raise ComparisonClassError(f"{self.name or 'L'}: no decay to 0 by the cap")
        elif self.kind is Kind.PD:
            if np.any(vals[1:] <= 0):
                raise ComparisonClassError(f"{self.name or 'PD'}: not positive away from 0")
        return self

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "params": dict(self.params),
                "domain_cap": self.domain_cap}


@dataclass(frozen=True)
class KLFn:
    """A two-argument class-KL function ``beta(r, t)``."""

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, r: ArrayLike, t: ArrayLike) -> ArrayLike:
        r_arr = np.asarray(r, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        out = np.asarray(self.func(r_arr, t_arr), dtype=float)
        if r_arr.ndim == 0 and t_arr.ndim == 0:
            return float(out)
        return out

    def certify(self, r_grid: Sequence[float], t_grid: Sequence[float], rtol: float = 1e-12) -> KLFn:
        """Sampled KL check: increasing in r with zero at 0, non-increasing in t."""
        r = np.asarray(r_grid, dtype=float)
        t = np.asarray(t_grid, dtype=float)
        tab = np.array([[self(ri, tj) for tj in t] for ri in r])
        scale = max(1.0, float(np.max(np.abs(tab))))
        zero_rows = r == 0
        if np.any(np.abs(tab[zero_rows]) > rtol * scale):
            raise ComparisonClassError("beta(0, t) != 0")
        if np.any(np.diff(tab, axis=0) < -rtol * scale):
            raise ComparisonClassError("beta(., t) not increasing")
        if np.any(np.diff(tab, axis=1) > rtol * scale):
            raise ComparisonClassError("beta(r, .) not non-increasing")
        return self


# ---------------------------------------------------------------- catalog

def identity(domain_cap: float = DEFAULT_CAP) -> ComparisonFn:
    return ComparisonFn(lambda s: s, Kind.KINF, domain_cap, "identity",
                        inverse_func=lambda y: y)


def linear(k: float, domain_cap: float = DEFAULT_CAP) -> ComparisonFn:
    if k <= 0:
        raise ValueError("linear gain must be positive")
    return ComparisonFn(lambda s: k * s, Kind.KINF, domain_cap, f"linear({k:g})",
                        inverse_func=lambda y: y / k, params={"k": k})


def power(p: float, k: float = 1.0, domain_cap: float = DEFAULT_CAP) -> ComparisonFn:
    """``s -> k * s**p``."""
    if p <= 0 or k <= 0:
        raise ValueError("power needs p > 0 and k > 0")
    return ComparisonFn(lambda s: k * np.power(s, p), Kind.KINF, domain_cap,
                        f"power({p:g},{k:g})",
                        inverse_func=lambda y: np.power(y / k, 1.0 / p),
                        params={"p": p, "k": k})


def exp_decay(rate: float = 1.0, scale: float = 1.0, domain_cap: float = 100.0) -> ComparisonFn:
    """Class-L function ``s -> scale * exp(-rate * s)``."""
    if rate <= 0 or scale <= 0:
        raise ValueError("exp_decay needs positive rate and scale")
    return ComparisonFn(lambda s: scale * np.exp(-rate * s), Kind.L, domain_cap,
                        f"exp_decay({rate:g})", params={"rate": rate, "scale": scale})


def zero(domain_cap: float = DEFAULT_CAP) -> ComparisonFn:
    return ComparisonFn(lambda s: np.zeros_like(s), Kind.K, domain_cap, "zero", is_zero=True,
                        inverse_func=None)


def tabulated(s: Sequence[float], values: Sequence[float], kind: Kind | str = Kind.KINF,
              domain_cap: float | None = None, name: str = "tabulated") -> ComparisonFn:
    """Monotone (PCHIP) interpolation of ``(s, f(s))`` pairs.

    Beyond the last knot the function continues linearly with the last
    secant slope, which keeps increasing tables unbounded.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(s)
    s, v = s[order], v[order]
    if s.size < 2 or np.any(np.diff(s) <= 0):
        raise ValueError("tabulated function needs at least two distinct abscissae")
    interp = PchipInterpolator(s, v, extrapolate=False)
    slope = (v[-1] - v[-2]) / (s[-1] - s[-2])
    s_last, v_last = s[-1], v[-1]

    def f(x):
        x = np.asarray(x, dtype=float)
        inner = interp(np.clip(x, s[0], s_last))
        return np.where(x > s_last, v_last + slope * (x - s_last), inner)

    cap = float(s_last if domain_cap is None else domain_cap)
    return ComparisonFn(f, Kind(kind), cap, name,
                        params={"s": s.tolist(), "values": v.tolist()})


CATALOG = {
    "identity": identity,
    "linear": linear,
    "power": power,
    "exp-decay": exp_decay,
    "zero": zero,
}


def from_spec(spec: Mapping | str) -> ComparisonFn:
    """Build a function from a config entry such as ``{"name": "power", "p": 2}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    if name == "tabulated":
        return tabulated(spec["s"], spec["values"], spec.get("kind", "Kinf"))
    if name == "tabulated-csv":
        data = np.loadtxt(spec["path"], delimiter=",", ndmin=2)
        return tabulated(data[:, 0], data[:, 1], spec.get("kind", "Kinf"))
    if name not in CATALOG:
        raise KeyError(f"unknown comparison function {name!r}")
    return CATALOG[name](**spec)


# ---------------------------------------------------------------- algebra

def invert(f: ComparisonFn, y: float) -> float:
    """Return ``x`` with ``f(x) = y`` for ``f`` of class K or K-infinity."""
    if f.kind not in (Kind.K, Kind.KINF) or f.is_zero:
        raise KindMismatch(f"cannot invert a function of kind {f.kind.value}")
    y = float(y)
    f0 = f(0.0)
    if y < f0 - 1e-15:
        raise NoBracket(f"target {y} below f(0) = {f0}")
    if y <= f0:
        return 0.0
    if f.inverse_func is not None:
        return float(f.inverse_func(np.asarray(y)))
    if f.kind is Kind.K:
        if y > f(f.domain_cap):
            raise NoBracket(f"target {y} exceeds f(domain_cap) for a class-K function")
        hi = f.domain_cap
    else:
        hi = 1.0
        while f(hi) < y:
            hi *= 2.0
            if hi > 1e300:
                raise NoBracket(f"no bracket found for target {y}")
    lo = 0.0
    # geometric bracket shrink keeps brentq's interval tight for steep functions
    while hi > 1e-300 and f(hi / 2.0) >= y:
        hi /= 2.0
    lo = hi / 2.0 if f(hi / 2.0) < y else 0.0
    x = brentq(lambda s: f(s) - y, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(x)


def inverse(f: ComparisonFn) -> ComparisonFn:
    """Function-valued inverse of a K-infinity (or K on its range) function."""
    if f.kind not in (Kind.K, Kind.KINF) or f.is_zero:
        raise KindMismatch(f"no inverse for kind {f.kind.value}")

    def g(y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 0:
            return np.asarray(invert(f, float(y)))
        return np.array([invert(f, float(v)) for v in y.ravel()]).reshape(y.shape)

    cap = f.domain_cap if f.kind is Kind.KINF else float(f(f.domain_cap))
    return ComparisonFn(g, f.kind, cap, f"inv({f.name})", inverse_func=f.func)


def compose(outer: ComparisonFn, inner: ComparisonFn) -> ComparisonFn:
    """Pointwise ``outer∘inner`` with the resulting class."""
    if outer.is_zero or inner.is_zero:
        if inner.is_zero and outer.kind not in (Kind.K, Kind.KINF, Kind.PD):
            raise KindMismatch("L-function applied to a zero gain")
        return zero(inner.domain_cap)
    key = (outer.kind, inner.kind)
    if key not in _COMPOSE_TABLE:
        raise KindMismatch(f"{outer.kind.value}∘{inner.kind.value} has no defined class")
    kind = _COMPOSE_TABLE[key]
    inv = None
    if outer.inverse_func is not None and inner.inverse_func is not None \
            and kind in (Kind.K, Kind.KINF):
        oi, ii = outer.inverse_func, inner.inverse_func
        inv = lambda y: ii(oi(y))  # noqa: E731
    f_out, f_in = outer.func, inner.func
    return ComparisonFn(lambda s: f_out(f_in(s)), kind, inner.domain_cap,
                        f"{outer.name}∘{inner.name}", inverse_func=inv)


def scaled(k: float, f: ComparisonFn) -> ComparisonFn:
    """``s -> k * f(s)`` for ``k > 0``."""
    if k <= 0:
        raise ValueError("scale factor must be positive")
    if f.is_zero:
        return f
    inv = None
    if f.inverse_func is not None:
        fi = f.inverse_func
        inv = lambda y: fi(y / k)  # noqa: E731
    func = f.func
    return ComparisonFn(lambda s: k * func(s), f.kind, f.domain_cap, f"{k:g}*{f.name}",
                        inverse_func=inv)


def add(f: ComparisonFn, g: ComparisonFn) -> ComparisonFn:
    if f.is_zero:
        return g
    if g.is_zero:
        return f
    if f.kind is Kind.L or g.kind is Kind.L:
        raise KindMismatch("sums are only defined for increasing classes")
    kinds = {f.kind, g.kind}
    if kinds <= {Kind.K, Kind.KINF}:
        kind = Kind.KINF if Kind.KINF in kinds else Kind.K
    else:
        kind = Kind.PD
    ff, gf = f.func, g.func
    return ComparisonFn(lambda s: ff(s) + gf(s), kind, min(f.domain_cap, g.domain_cap),
                        f"({f.name}+{g.name})")


def pointwise_max(f: ComparisonFn, g: ComparisonFn) -> ComparisonFn:
    if f.is_zero:
        return g
    if g.is_zero:
        return f
    kind = Kind.KINF if Kind.KINF in (f.kind, g.kind) else f.kind
    ff, gf = f.func, g.func
    return ComparisonFn(lambda s: np.maximum(ff(s), gf(s)), kind,
                        min(f.domain_cap, g.domain_cap), f"max({f.name},{g.name})")


# ---------------------------------------------------------------- KL construction

def _decay_profile(sigma_r: float, taus: np.ndarray):
    """Knots and tail rate of the class-L profile for one magnitude."""
    n = taus.size - 1
    levels = sigma_r * np.power(2.0, -np.arange(n, dtype=float))   # eps_0 .. eps_{n-1}
    knot_v = np.concatenate([[2.0 * sigma_r], levels])
    log_v = np.log(knot_v)
    rate = (log_v[-2] - log_v[-1]) / (taus[-1] - taus[-2])
    return log_v, rate


def kl_from_decay_times(
    sigma: ComparisonFn,
    tau_table: Callable[[float], Sequence[float]] | Mapping[float, Sequence[float]],
    r_grid: Sequence[float] | None = None,
) -> KLFn:
    """Assemble a KL bound from settle times of the halving levels.

    ``tau_table`` is either a callable or a mapping from magnitudes to
    time lists (looked up at the smallest key ``>= r``). ``tau_table(r)`` returns ``[tau_0 = 0, tau_1, ..., tau_N]`` where
    ``tau_n`` is a time after which the tracked quantity stays below
    ``2**-n * sigma(r)``. The profile ``omega(r, .)`` takes the value
    ``2 sigma(r)`` at 0 and ``2**-(n-1) sigma(r)`` at ``tau_n``, is
    log-linear between knots and decays exponentially past the last one.
    The result is ``sup_{s <= r} omega(s, t)`` taken over ``r_grid``
    together with ``r`` itself.
    """
    if isinstance(tau_table, Mapping):
        table = dict(tau_table)
        keys = np.array(sorted(table))

        def lookup(r):
            # smallest recorded magnitude >= r; past the table the last row is reused
            i = min(int(np.searchsorted(keys, r - 1e-15)), keys.size - 1)
            return table[keys[i]]
    else:
        lookup = tau_table

    grid = np.unique(np.concatenate([[0.0], np.asarray(
        np.geomspace(1e-3, 1e3, 121) if r_grid is None else r_grid, dtype=float)]))
    cache: dict[float, tuple] = {}

    def profile(r: float):
        if r in cache:
            return cache[r]
        if r <= 0:
            cache[r] = None
            return None
        taus = np.asarray(lookup(r), dtype=float)
        if taus.size < 2 or taus[0] != 0.0:
            raise NonMonotoneTimes(f"decay times must start with tau_0 = 0 (r={r})")
        if np.any(np.diff(taus) <= 0):
            raise NonMonotoneTimes(f"decay times not strictly increasing (r={r})")
        s = float(sigma(r))
        if s <= 0:
            cache[r] = None
            return None
        log_v, rate = _decay_profile(s, taus)
        cache[r] = (taus, log_v, rate)
        return cache[r]

    def omega(r: float, t: np.ndarray) -> np.ndarray:
        prof = profile(float(r))
        if prof is None:
            return np.zeros_like(t)
        taus, log_v, rate = prof
        inner = np.interp(t, taus, log_v)
        tail = log_v[-1] - rate * (t - taus[-1])
        return np.exp(np.where(t > taus[-1], tail, inner))

    def beta(r, t):
        r_b, t_b = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        out = np.zeros(r_b.shape)
        flat_r, flat_t, flat_out = r_b.ravel(), t_b.ravel(), out.reshape(-1)
        for ri in np.unique(flat_r):
            sel = flat_r == ri
            ts = flat_t[sel]
            best = omega(float(ri), ts)
            for s in grid[(grid > 0) & (grid < ri)]:
                best = np.maximum(best, omega(float(s), ts))
            flat_out[sel] = best
        return out

    return KLFn(beta, name="kl_from_decay_times")

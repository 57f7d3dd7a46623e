"""Retarded delay systems, piecewise-constant inputs and a method-of-steps solver.

The solver is classical fixed-step RK4 on the lattice ``k * step``.
Extra step boundaries are forced wherever the solution may lose
smoothness: 0, the breakpoints of the initial history and the input
switches, each carried forward by multiples of the delay. Every step
appends one cubic Hermite segment (end values and end slopes) to the
dense output, which is also where delayed values are read from.
"""

from __future__ import annotations

import bisect
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, OutOfSpan
from .history import HistoryFunction, constant, restrict_hermite
from .reports import CheckReport, Violation

BLOWUP_CAP = 1e8
_TIME_TOL = 1e-12

Rhs = Callable[[Callable[[float], np.ndarray], np.ndarray], np.ndarray]


# ---------------------------------------------------------------- inputs

@dataclass(frozen=True, eq=False)
class InputSignal:
    """Right-continuous piecewise-constant input.

    ``starts[k]`` is where piece ``k`` begins (``starts[0] == 0``); piece
    ``k`` holds ``values[k]`` until ``starts[k+1]`` or ``horizon``. Past
    the horizon the last value is held.
    """

    starts: np.ndarray
    values: np.ndarray
    horizon: float = math.inf

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if starts.size != values.shape[0] or starts.size == 0:
            raise ConfigError("input needs one value per piece")
        if starts[0] != 0.0 or np.any(np.diff(starts) < 0):
            raise ConfigError("input pieces must start at 0 and be ordered")
        # merge zero-length pieces (later value wins)
        keep = np.append(np.diff(starts) > 0, True)
        starts, values = starts[keep], values[keep]
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_norm", float(np.max(np.linalg.norm(values, axis=1))))
        object.__setattr__(self, "_starts", starts.tolist())

    @classmethod
    def constant(cls, value, horizon: float = math.inf) -> InputSignal:
        return cls(np.array([0.0]), np.atleast_1d(np.asarray(value, dtype=float))[None, :], horizon)

    @classmethod
    def zero(cls, m: int = 1, horizon: float = math.inf) -> InputSignal:
        return cls.constant(np.zeros(m), horizon)

    @property
    def m(self) -> int:
        return int(self.values.shape[1])

    def norm(self) -> float:
        """``sup_t |u(t)|`` (exact for piecewise constants)."""
        return self._norm  # type: ignore[attr-defined]

    def value_at(self, t: float) -> np.ndarray:
        k = bisect.bisect_right(self._starts, t) - 1
        return self.values[max(k, 0)]

    def switch_times(self, a: float, b: float) -> list[float]:
        """Switching times strictly inside ``(a, b)``."""
        return [float(s) for s in self.starts[1:] if a < s < b]

    def shift(self, t: float) -> InputSignal:
        """``u(. + t)``."""
        k = max(bisect.bisect_right(self.starts.tolist(), t) - 1, 0)
        starts = np.concatenate([[0.0], self.starts[k + 1:] - t])
        return InputSignal(starts, self.values[k:], self.horizon - t)

    def to_dict(self) -> dict:
        return {"starts": self.starts.tolist(), "values": self.values.tolist(),
                "horizon": self.horizon if math.isfinite(self.horizon) else "inf"}


# ---------------------------------------------------------------- systems

@dataclass(frozen=True)
class DelaySystem:
    """``x'(t) = f(x_t, u(t))`` with state dimension ``n`` and delay ``theta``.

    ``rhs(phi, u)`` receives a callable history view ``phi(tau)`` on
    ``[-theta, 0]`` (a :class:`HistoryFunction` also qualifies) and the
    current input value.
    """

    n: int
    m: int
    theta: float
    rhs: Rhs
    name: str = "custom"
    lipschitz_hint: Callable[[float], float] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theta <= 0 or self.n < 1 or self.m < 0:
            raise ConfigError("system needs theta > 0, n >= 1, m >= 0")

    def f(self, phi, u) -> np.ndarray:
        return np.asarray(self.rhs(phi, np.atleast_1d(np.asarray(u, dtype=float))), dtype=float).reshape(self.n)

    def assumption_check(self) -> float:
        """``|f(0, 0)|``; Assumption 2 asks for zero."""
        return float(np.linalg.norm(self.f(constant(np.zeros(self.n), self.theta), np.zeros(max(self.m, 1)))))

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "m": self.m, "theta": self.theta,
                "params": dict(self.params)}


def linear_delay_system(a: float = 0.0, b: float = -1.0, theta: float = 1.0,
                        g: float = 0.0) -> DelaySystem:
    """Scalar ``x' = a x(t) + b x(t - theta) + g u``."""
    def rhs(phi, u):
        return a * phi(0.0) + b * phi(-theta) + g * u[0]
    return DelaySystem(1, 1, theta, rhs, "linear-delay", params={"a": a, "b": b, "theta": theta, "g": g})


def zero_system(n: int = 1, theta: float = 1.0) -> DelaySystem:
    return DelaySystem(n, 1, theta, lambda phi, u: np.zeros(n), "zero", params={"n": n, "theta": theta})


# ---------------------------------------------------------------- trajectories

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense output of a solve on ``[-theta, t_end]`` as Hermite segments."""

    system: DelaySystem
    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    n_initial: int
    escape_time: float | None = None
    T: float = 0.0

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def escaped(self) -> bool:
        return self.escape_time is not None

    def eval(self, t):
        """``x(t)`` for scalar or array ``t`` in the computed span."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0] - _TIME_TOL) or np.any(t > self.t_end + _TIME_TOL):
            raise OutOfSpan(f"time outside computed span [{self.times[0]}, {self.t_end}]")
        t = np.clip(t, self.times[0], self.t_end)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0 = self.times[idx]
        h = (self.times[idx + 1] - t0)[..., None]
        u = ((t - t0)[..., None]) / h
        y0, y1 = self.values[idx], self.values[idx + 1]
        m0, m1 = self.slopes[idx, 0], self.slopes[idx, 1]
        a2 = -3.0 * y0 - 2.0 * h * m0 + 3.0 * y1 - h * m1
        a3 = 2.0 * y0 + h * m0 - 2.0 * y1 + h * m1
        return y0 + u * (h * m0 + u * (a2 + u * a3))

    def derivative(self, t):
        """Right derivative of the dense output."""
        t = np.clip(np.asarray(t, dtype=float), self.times[0], self.t_end)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0 = self.times[idx]
        h = (self.times[idx + 1] - t0)[..., None]
        u = ((t - t0)[..., None]) / h
        y0, y1 = self.values[idx], self.values[idx + 1]
        m0, m1 = self.slopes[idx, 0], self.slopes[idx, 1]
        a2 = -3.0 * y0 - 2.0 * h * m0 + 3.0 * y1 - h * m1
        a3 = 2.0 * y0 + h * m0 - 2.0 * y1 + h * m1
        return (h * m0 + u * (2.0 * a2 + 3.0 * u * a3)) / h

    def step_times(self) -> np.ndarray:
        """Breakpoints of the solution on ``[0, t_end]``."""
        return self.times[self.n_initial - 1:]

    def to_csv(self) -> str:
        t = self.step_times()
        x = self.values[self.n_initial - 1:]
        buf = io.StringIO()
        header = ",".join(["t"] + [f"x{j + 1}" for j in range(self.system.n)])
        np.savetxt(buf, np.column_stack([t, x]), delimiter=",", fmt="%.17g", header=header, comments="")
        return buf.getvalue()


def window(traj: Trajectory, t: float) -> HistoryFunction:
    """The history ``x_t`` cut out of the dense output."""
    theta = traj.system.theta
    if t < -_TIME_TOL or t > traj.t_end + _TIME_TOL:
        raise OutOfSpan(f"window at t={t} not inside [0, {traj.t_end}]")
    t = min(max(t, 0.0), traj.t_end)
    taus, vals, slopes = restrict_hermite(traj.times, traj.values, traj.slopes, t - theta, t)
    taus = taus - t
    taus[0], taus[-1] = -theta, 0.0
    # drop slivers created by rounding at coinciding breakpoints
    keep = np.append(np.diff(taus) > 1e-13, True)
    if not np.all(keep):
        keep_seg = keep[:-1]
        taus = taus[keep]
        vals = vals[keep]
        slopes = slopes[keep_seg]
        taus[-1] = 0.0
    return HistoryFunction(taus, vals, slopes)


class _View:
    """History view ``tau -> x(t + tau)`` used while a step is being built."""

    __slots__ = ("times", "vals", "slopes", "t", "t_n", "x_n", "x")

    def __init__(self, times, vals, slopes):
        self.times = times
        self.vals = vals
        self.slopes = slopes

    def set(self, t, t_n, x_n, x):
        self.t, self.t_n, self.x_n, self.x = t, t_n, x_n, x

    def __call__(self, tau):
        s = self.t + tau
        if tau == 0.0 or s >= self.t:
            return self.x
        if s > self.t_n:
            w = (s - self.t_n) / (self.t - self.t_n)
            return self.x_n + w * (self.x - self.x_n)
        times = self.times
        k = bisect.bisect_right(times, s) - 1
        if k >= len(times) - 1:
            k = len(times) - 2
        if k < 0:
            k = 0
        t0 = times[k]
        h = times[k + 1] - t0
        u = (s - t0) / h
        y0 = self.vals[k]
        y1 = self.vals[k + 1]
        m0, m1 = self.slopes[k]
        if u == 0.0:
            return y0
        if u == 1.0:
            return y1
        u2 = u * u
        u3 = u2 * u
        return ((2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * h * m0
                + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * h * m1)


def _step_grid(theta: float, T: float, step: float, sources: Sequence[float]) -> list[float]:
    """Lattice ``k * step`` plus forced points ``d + k theta`` for every source ``d``.

    Sources are the times where the solution may lose smoothness: 0, the
    breakpoints of the piecewise-cubic initial history and the input
    switches. The delay carries each of them forward by multiples of
    ``theta``. Gaps between forced points that are longer than ``step``
    are filled with the lattice points inside them, except those closer
    than ``step / 1000`` to either end, so a forced point only changes
    the grid locally. A restart from a window of a solution therefore
    reproduces the grid of the original run.
    """
    forced = {0.0, float(T)}
    for d in set(sources) | {0.0}:
        k = 0
        while d + k * theta < T - _TIME_TOL:
            if d + k * theta > _TIME_TOL:
                forced.add(float(d + k * theta))
            k += 1
    fixed = np.array(sorted(forced))
    lattice = step * np.arange(1, math.ceil(T / step) + 1)
    lattice = lattice[lattice < T - _TIME_TOL]
    pos = np.clip(np.searchsorted(fixed, lattice), 1, fixed.size - 1)
    left, right = fixed[pos - 1], fixed[pos]
    inside = (right - left > step * (1 + 1e-9)) & (np.minimum(lattice - left, right - lattice) > 1e-3 * step)
    lattice = lattice[inside]
    grid = np.unique(np.concatenate([fixed, lattice]))
    keep = np.concatenate([[True], np.diff(grid) > _TIME_TOL])
    return grid[keep].tolist()


def integrate(sys: DelaySystem, x0: HistoryFunction, u: InputSignal | None, T: float,
              step: float | None = None, blowup_cap: float = BLOWUP_CAP) -> Trajectory:
    """Solve on ``[0, T]`` by the method of steps with classical RK4.

    The returned trajectory covers ``[-theta, t_end]``; ``t_end < T``
    only when the norm exceeded ``blowup_cap`` (or became non-finite), in
    which case ``escape_time`` records the first offending step time.
    """
    theta = sys.theta
    if abs(x0.theta - theta) > 1e-12:
        raise ConfigError(f"history delay {x0.theta} differs from system delay {theta}")
    if x0.dim != sys.n:
        raise ConfigError("history dimension differs from system dimension")
    if step is None:
        step = theta / 100.0
    if not 0 < step <= theta / 4 + 1e-15:
        raise ConfigError(f"step {step} must lie in (0, theta/4]")
    if T < 0:
        raise ConfigError("T must be non-negative")
    if u is None:
        u = InputSignal.zero(max(sys.m, 1))

    times = [float(t) for t in x0.taus]
    vals = [v.copy() for v in x0.values]
    slopes = [(s[0].copy(), s[1].copy()) for s in x0.slopes]
    n_init = len(times)
    view = _View(times, vals, slopes)
    rhs = sys.rhs

    def f(t, t_n, x_n, x, uv):
        view.set(t, t_n, x_n, x)
        return np.asarray(rhs(view, uv), dtype=float).reshape(sys.n)

    grid = _step_grid(theta, T, step, list(x0.taus[1:-1]) + list(u.switch_times(0.0, T)))
    escape = None
    x = vals[-1].copy()
    k1 = None
    k1_u = None
    for a, b in zip(grid[:-1], grid[1:]):
        h = b - a
        uv = u.value_at(0.5 * (a + b))
        if k1 is None or k1_u is None or not (k1_u == uv).all():
            k1 = f(a, a, x, x, uv)
        x2 = x + 0.5 * h * k1
        k2 = f(a + 0.5 * h, a, x, x2, uv)
        x3 = x + 0.5 * h * k2
        k3 = f(a + 0.5 * h, a, x, x3, uv)
        x4 = x + h * k3
        k4 = f(b, a, x, x4, uv)
        x_new = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        size = math.sqrt(float(x_new @ x_new))
        if not size <= blowup_cap:
            escape = b
            break
        m1 = f(b, a, x, x_new, uv)
        slopes.append((k1, m1))
        times.append(b)
        vals.append(x_new)
        x, k1, k1_u = x_new, m1, uv

    return Trajectory(sys, np.array(times), np.array(vals), np.array(slopes),
                      n_init, escape, float(T))


# ---------------------------------------------------------------- growth bound on f

def k_bound_check(sys: DelaySystem, xi1, xi2, space, refine: bool = True) -> CheckReport:
    """Sampled test of ``|f(phi, v)| <= xi1(||phi||) + xi2(|v|)``."""
    report = CheckReport("rhs-growth-bound")
    for i in range(space.sample_count):
        phi, v = space.sample(i)
        lhs = float(np.linalg.norm(sys.f(phi, v)))
        rhs = float(xi1(phi.sup_norm())) + float(xi2(float(np.linalg.norm(v))))
        report.record(lhs - rhs)
        if lhs > rhs * (1 + 1e-12) + 1e-12:
            report.add(Violation(i, phi.to_csv(), np.atleast_1d(v).tolist(), lhs, rhs))
    report.details["system"] = sys.name
    return report.finalize()

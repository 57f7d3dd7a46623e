"""Empirical estimation of V-stability properties from simulated trajectories.

Everything here is sampled evidence: envelopes majorize the training
data by construction and are then tested on held-out seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import comparison as cf
from .comparison import ComparisonFn, Kind, KLFn
from .dynamics import DelaySystem, InputSignal, Trajectory, integrate, window
from .errors import DomainError, FitFailure
from .history import HistoryFunction
from .lkf import LKFCandidate, eval_lkf, lkf_along
from .reports import CheckReport, Violation
from .sampling import SampleSpace

EVIDENCE = "sampled evidence"


# ---------------------------------------------------------------- envelopes

def fit_envelope(x: Sequence[float], y: Sequence[float], name: str = "envelope",
                 strict: float = 1e-9) -> ComparisonFn:
    """Increasing continuous majorant of the points ``(x, y)``.

    Running maxima ``P_k`` of ``y`` over sorted ``x`` form a staircase.
    The envelope takes the value ``P_{k+1}`` at ``x_k``, so it already
    covers the next step, interpolates linearly between knots, starts
    from 0 at 0, continues past the last knot with the slope of the ray
    through the origin and carries an extra ``strict * s`` for strict
    increase. A positive value at ``x = 0`` raises :class:`FitFailure`.
    """
    x = np.asarray(x, dtype=float)
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    if x.size == 0:
        raise FitFailure("no data to fit an envelope")
    if np.any((x <= 0) & (y > 0)):
        raise FitFailure("positive value at 0 cannot be majorized by a class-K function")
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    ux, inv = np.unique(xs, return_inverse=True)
    top = np.zeros(ux.size)
    np.maximum.at(top, inv, ys)
    run = np.maximum.accumulate(top)
    shifted = np.append(run[1:], run[-1])
    knots_x = ux
    knots_v = shifted
    if knots_x[0] > 0:
        knots_x = np.concatenate([[0.0], knots_x])
        knots_v = np.concatenate([[0.0], knots_v])
    else:
        knots_v[0] = 0.0
    knots_v = np.maximum.accumulate(knots_v)
    last_x, last_v = float(knots_x[-1]), float(knots_v[-1])
    with np.errstate(over="ignore"):
        ray = last_v / last_x if last_x > 0 else 0.0
    if not math.isfinite(ray):
        ray = last_v

    def f(s):
        s = np.asarray(s, dtype=float)
        inner = np.interp(s, knots_x, knots_v)
        out = np.where(s > last_x, last_v + ray * np.maximum(s - last_x, 0.0), inner)
        return out + strict * s

    params = {"knots_s": knots_x.tolist(), "knots_v": knots_v.tolist(), "ray_slope": ray,
              "strict": strict}
    return ComparisonFn(f, Kind.KINF, max(1e6, last_x), name, params=params)


def _staircase_zero_at_zero(env: ComparisonFn) -> bool:
    return float(env(0.0)) == 0.0


# ---------------------------------------------------------------- simulation helpers

@dataclass
class Run:
    index: int
    x0: HistoryFunction
    u: InputSignal
    traj: Trajectory
    ts: np.ndarray
    vs: np.ndarray

    @property
    def v0(self) -> float:
        return float(self.vs[0])

    @property
    def u_norm(self) -> float:
        return self.u.norm()

    @property
    def escaped(self) -> bool:
        return self.traj.escaped


def refined_max(ts: np.ndarray, vs: np.ndarray) -> float:
    """Grid maximum refined by the vertex of the parabola through its neighbours."""
    k = int(np.argmax(vs))
    best = float(vs[k])
    if 0 < k < vs.size - 1:
        t0, t1, t2 = ts[k - 1:k + 2]
        v0, v1, v2 = vs[k - 1:k + 2]
        denom = (t0 - t1) * (t0 - t2) * (t1 - t2)
        a = (t2 * (v1 - v0) + t1 * (v0 - v2) + t0 * (v2 - v1)) / denom
        b = (t2 * t2 * (v0 - v1) + t1 * t1 * (v2 - v0) + t0 * t0 * (v1 - v2)) / denom
        if a < 0:
            tv = -b / (2 * a)
            if t0 < tv < t2:
                c = v1 - a * t1 * t1 - b * t1
                best = max(best, float(a * tv * tv + b * tv + c))
    return best


def scale_to_level(V: LKFCandidate, phi: HistoryFunction, level: float, iters: int = 60) -> HistoryFunction:
    """Multiple ``lam * phi`` with ``V(lam * phi) = level`` (V assumed increasing along rays)."""
    v = eval_lkf(V, phi)
    if v <= 0 or level <= 0:
        return phi.map_values(0.0) if level <= 0 else phi
    lam = math.sqrt(level / v)
    # exact for quadratic functionals; otherwise refine by bisection
    if abs(eval_lkf(V, phi.map_values(lam)) - level) <= 1e-12 * level:
        return phi.map_values(lam)
    lo, hi = 0.0, 1.0
    while eval_lkf(V, phi.map_values(hi)) < level:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if eval_lkf(V, phi.map_values(mid)) <= level:
            lo = mid
        else:
            hi = mid
    return phi.map_values(lo)


def _input_for(space: SampleSpace, i: int, T: float, amplitude: float | None = None) -> InputSignal:
    amp = space.input_amplitude if amplitude is None else amplitude
    if amp <= 0:
        return InputSignal.zero(space.m)
    return space.with_(input_amplitude=amp).input_signal(i, T)


def simulate(sys: DelaySystem, V: LKFCandidate, x0: HistoryFunction, u: InputSignal, T: float,
             step: float, index: int = 0) -> Run:
    traj = integrate(sys, x0, u, T, step)
    ts, vs = lkf_along(V, traj)
    return Run(index, x0, u, traj, ts, vs)


# ---------------------------------------------------------------- fits

@dataclass
class StabilityFit:
    """Fitted functions for one property plus the held-out residual report."""

    property: str
    sigma: ComparisonFn | None = None
    gamma: ComparisonFn | None = None
    beta: KLFn | None = None
    tau: float | dict | None = None
    offset: float = 0.0
    residual: CheckReport | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "sigma": self.sigma.to_dict() if self.sigma else None,
            "gamma": self.gamma.to_dict() if self.gamma else None,
            "tau": self.tau,
            "offset": self.offset,
            "residual": self.residual.to_dict() if self.residual else None,
            "details": self.details,
            "evidence": EVIDENCE,
        }


def _ugs_runs(sys, V, space, T, step, zero_input: bool):
    runs = []
    for i in range(space.sample_count):
        u = InputSignal.zero(space.m) if zero_input else _input_for(space, i, T)
        runs.append(simulate(sys, V, space.history(i), u, T, step, i))
    return runs


def estimate_ugs(sys: DelaySystem, V: LKFCandidate, space: SampleSpace, T: float,
                 step: float | None = None, holdout: SampleSpace | None = None,
                 check: bool = True) -> StabilityFit:
    """Fit ``sup_t V(x_t) <= sigma(V(x_0)) + gamma(||u||)``.

    ``sigma`` comes from zero-input runs of the sampled histories; the
    gain is the envelope of whatever the input runs exceed it by.
    Escaping runs are excluded and listed. With ``check`` the fit is
    tested on held-out seeds and the result stored as ``residual``.
    """
    if T < sys.theta:
        raise DomainError("UGS estimation needs T >= theta")
    step = sys.theta / 100 if step is None else step
    zero_runs = _ugs_runs(sys, V, space, T, step, zero_input=True)
    ok0 = [r for r in zero_runs if not r.escaped]
    if not ok0:
        raise FitFailure("every zero-input run escaped")
    sup0 = np.array([refined_max(r.ts, r.vs) for r in ok0])
    v0 = np.array([r.v0 for r in ok0])
    sigma = fit_envelope(v0, sup0, "sigma_hat")
    escaped = [r.index for r in zero_runs if r.escaped]
    if space.input_amplitude > 0:
        in_runs = [r for r in _ugs_runs(sys, V, space, T, step, zero_input=False)]
        escaped += [r.index for r in in_runs if r.escaped]
        in_runs = [r for r in in_runs if not r.escaped]
        excess = [max(0.0, refined_max(r.ts, r.vs) - float(sigma(r.v0))) for r in in_runs]
        gamma = fit_envelope([r.u_norm for r in in_runs], excess, "gamma_hat")
    else:
        gamma = cf.zero()
    identity_ok = bool(np.all(sup0 <= v0 * (1 + 1e-9) + 1e-12))
    fit = StabilityFit("VUGS", sigma, gamma, offset=0.0,
                       details={"escaped": sorted(set(escaped)), "training_samples": len(ok0),
                                "identity_sigma_suffices": identity_ok, "T": T, "step": step})
    hold = holdout if holdout is not None else space.with_(seed=space.seed + 1)
    report = CheckReport("V-UGS-estimate")
    for i in range(hold.sample_count if check else 0):
        u = _input_for(hold, i, T)
        run = simulate(sys, V, hold.history(i), u, T, step, i)
        if run.escaped:
            continue
        lhs = refined_max(run.ts, run.vs)
        rhs = float(sigma(run.v0)) + float(gamma(run.u_norm))
        report.record(lhs - rhs)
        if lhs > rhs:
            report.add(Violation(i, run.x0.to_csv(), [run.u_norm], lhs, rhs))
    fit.residual = report.finalize()
    return fit


def estimate_ugb(sys, V, space, T, step=None, holdout=None) -> StabilityFit:
    """UGB fit; a UGS fit is a UGB fit with zero offset."""
    fit = estimate_ugs(sys, V, space, T, step, holdout)
    fit.property = "VUGB"
    fit.offset = 0.0
    return fit


class HitResult(NamedTuple):
    tau_hat: float
    times: np.ndarray
    censored: np.ndarray
    fit: StabilityFit


def _gated_histories(V, space, r, mixed, histories=None):
    """Initial histories satisfying ``V(x0) <= r`` (or ``||x0|| <= r`` when mixed)."""
    out = []
    if histories is not None:
        for phi in histories:
            val = phi.sup_norm() if mixed else eval_lkf(V, phi)
            if val > r * (1 + 1e-12):
                raise DomainError("supplied history violates the gate")
            out.append(phi)
        return out
    for i in range(space.sample_count):
        phi = space.history(i)
        w = 1.0 if i == 0 else float(space.rng(i, 3).uniform(0.1, 1.0))
        if mixed:
            n = phi.sup_norm()
            out.append(phi.map_values(r * w / n) if n > 0 else phi)
        else:
            out.append(scale_to_level(V, phi, r * w))
    return out


def _first_hit(ts, vs, target):
    hit = np.flatnonzero(vs <= target)
    return (float(ts[hit[0]]), False) if hit.size else (float(ts[-1]), True)


def _settle(ts, vs, target):
    above = np.flatnonzero(vs > target)
    if above.size == 0:
        return 0.0, False
    k = above[-1]
    if k == vs.size - 1:
        return float(ts[-1]), True
    return float(ts[k + 1]), False


def _hitting(kind, sys, V, gamma, eps, r, space, T_cap, step, mixed, global_inputs, histories):
    gamma = gamma if gamma is not None else cf.zero()
    step = sys.theta / 100 if step is None else step
    xs = _gated_histories(V, space, r, mixed, histories)
    amp = space.input_amplitude
    if not global_inputs:
        amp = min(amp, r)
    else:
        amp = 10.0 * r if amp > 0 else 0.0
    times, cens = [], []
    report = CheckReport(f"{kind}-times")
    for i, x0 in enumerate(xs):
        u = _input_for(space, i, T_cap, amp)
        run = simulate(sys, V, x0, u, T_cap, step, i)
        target = eps + float(gamma(run.u_norm))
        if kind == "ULIM":
            t, c = _first_hit(run.ts, run.vs, target)
        else:
            t, c = _settle(run.ts, run.vs, target)
        if run.escaped:
            t, c = run.ts[-1], True
        times.append(t)
        cens.append(c)
        report.record(0.0)
    times = np.array(times)
    cens = np.array(cens, dtype=bool)
    report.details.update(not_reached=int(cens.sum()), T_cap=T_cap)
    report.status = "pass" if not cens.any() else "inconclusive"
    fit = StabilityFit(("Mixed" if mixed else "") + ("V" + kind if kind != "GUAG" else "VGUAG"),
                       gamma=gamma, tau=float(times.max()) if times.size else 0.0, residual=report.finalize(),
                       details={"eps": eps, "r": r, "not_reached": int(cens.sum()), "T_cap": T_cap,
                                "input_amplitude": amp, "mixed": mixed})
    return HitResult(float(times.max()) if times.size else 0.0, times, cens, fit)


def estimate_ulim(sys: DelaySystem, V: LKFCandidate, gamma: ComparisonFn | None, eps: float, r: float,
                  space: SampleSpace, T_cap: float, step: float | None = None, mixed: bool = False,
                  histories: Sequence[HistoryFunction] | None = None) -> HitResult:
    """First hitting times of ``V(x_t) <= eps + gamma(||u||)``.

    Samples are rescaled into the gate ``V(x0) <= r`` (``||x0|| <= r``
    for the mixed variant); inputs are limited to ``||u|| <= r``. Runs
    that never hit before ``T_cap`` are censored at ``T_cap``.
    """
    return _hitting("ULIM", sys, V, gamma, eps, r, space, T_cap, step, mixed, False, histories)


def estimate_uag(sys: DelaySystem, V: LKFCandidate, gamma: ComparisonFn | None, eps: float, r: float,
                 space: SampleSpace, T_cap: float, global_inputs: bool = False,
                 step: float | None = None, histories: Sequence[HistoryFunction] | None = None) -> HitResult:
    """Settle times (after the last exit from the target set).

    With ``global_inputs`` the input gate is dropped and amplitudes up
    to ``10 r`` are sampled as a proxy for all inputs.
    """
    kind = "GUAG" if global_inputs else "UAG"
    return _hitting(kind, sys, V, gamma, eps, r, space, T_cap, step, False, global_inputs, histories)


# ---------------------------------------------------------------- ISS KL fit

def _settle_levels(ts, vs, targets):
    """Settle time for each target; ``nan`` when still above at the horizon."""
    out = np.empty(len(targets))
    for n, tgt in enumerate(targets):
        t, cens = _settle(ts, vs, tgt)
        out[n] = np.nan if cens else t
    return out


def fit_iss_kl(sys: DelaySystem, V: LKFCandidate, space: SampleSpace, T: float,
               step: float | None = None, levels: int = 10,
               ugs: StabilityFit | None = None, holdout: SampleSpace | None = None
               ) -> tuple[KLFn, ComparisonFn, StabilityFit]:
    """Empirical KL bound ``V(x_t) <= beta(V(x0), t) + gamma(||u||)``.

    The gain comes from tail values of the input runs. The KL part uses
    settle times of the halving levels ``2^-n sigma(V(x0))``, measured
    relative to each run's own start and pooled by taking the maximum,
    then assembled by :func:`~vstab.comparison.kl_from_decay_times`.
    Levels never reached inside ``[0, T]`` get knots past the horizon,
    so the bound is only claimed on ``[0, T]``; the fit reports them as
    ``not_reached``. :class:`FitFailure` is raised when no sample shows
    any decay at all.
    """
    step = sys.theta / 100 if step is None else step
    if ugs is None:
        ugs = estimate_ugs(sys, V, space.with_(input_amplitude=0.0), T, step, check=False)
    sigma = ugs.sigma
    runs = [simulate(sys, V, space.history(i), _input_for(space, i, T), T, step, i)
            for i in range(space.sample_count)]
    runs = [r for r in runs if not r.escaped]
    if not runs:
        raise FitFailure("every run escaped")
    decayed = [r for r in runs if r.vs[-1] < r.v0 * (1 - 1e-6)]
    if not decayed:
        raise FitFailure("no sample shows any decay of V within the horizon")
    tail_start = 0.5 * T
    if space.input_amplitude > 0:
        tails = [float(np.max(r.vs[r.ts >= tail_start])) for r in runs]
        gamma = fit_envelope([r.u_norm for r in runs], tails, "gamma_hat")
    else:
        gamma = cf.zero()

    # settle times relative to each run's own sigma(V(x0)), pooled over all runs
    settle = np.zeros(levels)
    for r in runs:
        s0 = float(sigma(r.v0))
        extra = float(gamma(r.u_norm))
        st = _settle_levels(r.ts, r.vs, [2.0 ** -n * s0 + extra for n in range(1, levels + 1)])
        settle = np.maximum(settle, np.nan_to_num(st, nan=np.inf))
    taus = [0.0]
    unreached = 0
    for n in range(levels):
        if np.isfinite(settle[n]):
            t = max(float(settle[n]), taus[-1] + step)
        else:
            unreached += 1
            t = max(T, taus[-1]) + T * unreached
        taus.append(t)
    keys = np.unique([r.v0 for r in runs])
    beta = cf.kl_from_decay_times(sigma, lambda r: taus, r_grid=keys)

    fit = StabilityFit("VISS", sigma, gamma, beta,
                       details={"tau": taus, "not_reached": unreached, "valid_horizon": T,
                                "levels": levels, "training_samples": len(runs)})
    hold = holdout if holdout is not None else space.with_(seed=space.seed + 1)
    report = CheckReport("V-ISS-estimate")
    for i in range(hold.sample_count):
        run = simulate(sys, V, hold.history(i), _input_for(hold, i, T), T, step, i)
        if run.escaped:
            continue
        bound = np.asarray(beta(run.v0, run.ts)) + float(gamma(run.u_norm))
        margin = run.vs - bound
        k = int(np.argmax(margin))
        report.record(float(margin[k]))
        if margin[k] > 1e-12 * max(1.0, run.v0):
            report.add(Violation(i, run.x0.to_csv(), [run.u_norm], float(run.vs[k]), float(bound[k]),
                                 {"t": float(run.ts[k])}))
    fit.residual = report.finalize()
    return beta, gamma, fit


# ---------------------------------------------------------------- constructive quantities

class TauResult(NamedTuple):
    tau: float
    half_width: float
    overlap_ok: bool
    inflation: float


def theorem1_tau(r: float, eps: float, theta: float, mu: ComparisonFn, psi2: ComparisonFn,
                 alpha: ComparisonFn, inflate: bool = False) -> TauResult:
    """Limit time ``4 r theta mu(r) / (psi2^{-1}(eps) alpha(psi2^{-1}(eps) / 2))``.

    ``psi2`` is replaced by ``max(psi2, id)``. When ``inflate`` is set and
    the intervals of half-width ``psi2^{-1}(eps) / (2 mu(r))`` would
    overlap, ``psi2`` is multiplied by doubling factors until they do not.
    """
    if r <= 0 or eps <= 0:
        raise DomainError("r and eps must be positive")
    m = float(mu(r))
    if m <= 0:
        raise DomainError("mu(r) must be positive")

    def inv(y: float, lam: float) -> float:
        return min(cf.invert(psi2, y / lam), y / lam)

    lam = 1.0
    p = inv(eps, lam)
    overlap_ok = p / m <= theta
    if inflate:
        while p / m > theta:
            lam *= 2.0
            p = inv(eps, lam)
        overlap_ok = True
    a = float(alpha(0.5 * p))
    if a <= 0:
        return TauResult(math.inf, p / (2 * m), overlap_ok, lam)
    return TauResult(4.0 * r * theta * m / (p * a), p / (2.0 * m), overlap_ok, lam)


def viss_to_iss(beta: KLFn, theta: float) -> KLFn:
    """``(theta - t) r + beta(r, 0)`` on ``[0, theta]`` and ``beta(r, t - theta)`` after."""

    def f(r, t):
        r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        early = (theta - t) * r + np.asarray(beta(r, np.zeros_like(t)))
        late = np.asarray(beta(r, np.maximum(t - theta, 0.0)))
        return np.where(t <= theta, early, late)

    return KLFn(f, name=f"shifted({beta.name})")


def _trajectory_runs(sys, V, space, T, step):
    step = sys.theta / 100 if step is None else step
    return [simulate(sys, V, space.history(i), _input_for(space, i, T), T, step, i)
            for i in range(space.sample_count)]


def history_bound(ugs_sigma: ComparisonFn, ugs_gamma: ComparisonFn, psi1: ComparisonFn,
                  sys: DelaySystem | None = None, V: LKFCandidate | None = None,
                  space: SampleSpace | None = None, T: float = 20.0, step: float | None = None
                  ) -> tuple[ComparisonFn, ComparisonFn, CheckReport]:
    """``sigma = psi1^{-1} o 2 sigma~`` and ``gamma = psi1^{-1} o 2 gamma~``.

    With a system, functional and sample space the bound
    ``||x_t|| <= sigma(V(x0)) + gamma(||u||)`` is checked for ``t >= theta``.
    """
    inv = cf.inverse(psi1)
    sigma = cf.compose(inv, cf.scaled(2.0, ugs_sigma))
    gamma = cf.zero() if ugs_gamma.is_zero else cf.compose(inv, cf.scaled(2.0, ugs_gamma))
    report = CheckReport("history-norm-bound")
    if sys is not None and V is not None and space is not None:
        for run in _trajectory_runs(sys, V, space, T, step):
            if run.escaped:
                continue
            rhs = float(sigma(run.v0)) + float(gamma(run.u_norm))
            t_grid = run.ts[run.ts >= sys.theta]
            # ||x_t|| for t >= theta is the running max of |x| over [t - theta, t]
            dense = run.traj.eval(np.linspace(0.0, run.traj.t_end, 8 * run.ts.size))
            norms = np.linalg.norm(dense, axis=-1)
            lhs = float(np.max(norms)) if t_grid.size else 0.0
            report.record(lhs - rhs)
            if lhs > rhs:
                report.add(Violation(run.index, run.x0.to_csv(), [run.u_norm], lhs, rhs))
    return sigma, gamma, report.finalize()


def derivative_bound(xi1: ComparisonFn, xi2: ComparisonFn, sigma1: ComparisonFn, sigma2: ComparisonFn,
                     sys: DelaySystem | None = None, V: LKFCandidate | None = None,
                     space: SampleSpace | None = None, T: float = 20.0, step: float | None = None
                     ) -> tuple[ComparisonFn, ComparisonFn, CheckReport]:
    """``mu1 = xi1 o 2 sigma1`` and ``mu2 = xi1 o 2 sigma2 + xi2``.

    The optional check compares finite-difference slopes of simulated
    solutions for ``t >= theta`` with ``mu1(V(x0)) + mu2(||u||)``.
    """
    mu1 = cf.compose(xi1, cf.scaled(2.0, sigma1))
    if sigma2.is_zero:
        mu2 = xi2
    else:
        mu2 = cf.add(cf.compose(xi1, cf.scaled(2.0, sigma2)), xi2)
    report = CheckReport("derivative-bound")
    if sys is not None and V is not None and space is not None:
        for run in _trajectory_runs(sys, V, space, T, step):
            if run.escaped:
                continue
            ts = run.ts
            xs = run.traj.eval(ts)
            slopes = np.linalg.norm(np.diff(xs, axis=0), axis=-1) / np.diff(ts)
            keep = ts[:-1] >= sys.theta - 1e-12
            lhs = float(np.max(slopes[keep])) if keep.any() else 0.0
            rhs = float(mu1(run.v0)) + float(mu2(run.u_norm))
            report.record(lhs - rhs)
            if lhs > rhs:
                report.add(Violation(run.index, run.x0.to_csv(), [run.u_norm], lhs, rhs))
    return mu1, mu2, report.finalize()


# ---------------------------------------------------------------- reachability envelope

class BRSEnvelope:
    """Increasing envelope ``mu(C1, C2, tau)`` of reachable values of ``V``.

    The staircase ``mu~(C1, C2, tau) = max{V : V(x0) <= C1, ||u|| <= C2,
    t <= tau}`` is averaged over ``[C1, 2C1] x [C2, 2C2] x [tau, 2tau]``
    (exactly, since it is piecewise constant) and ``C1 C2 tau`` is added.
    A zero argument uses the right limit of the staircase on that axis.
    """

    def __init__(self, samples: Sequence[tuple[float, float, float, float]]):
        data = np.asarray(samples, dtype=float).reshape(-1, 4)
        if data.shape[0] == 0:
            raise FitFailure("empty sample set")
        self.axes = [np.unique(data[:, j]) for j in range(3)]
        idx = [np.searchsorted(self.axes[j], data[:, j]) for j in range(3)]
        grid = np.zeros(tuple(a.size for a in self.axes))
        np.maximum.at(grid, tuple(idx), np.maximum(data[:, 3], 0.0))
        for ax in range(3):
            grid = np.maximum.accumulate(grid, axis=ax)
        # prepend the empty region below the smallest datum (value 0)
        self.grid = np.pad(grid, [(1, 0)] * 3)

    def _weights(self, ax: int, c: float) -> tuple[np.ndarray, float]:
        edges = self.axes[ax]
        w = np.zeros(edges.size + 1)
        if c <= 0:
            w[int(np.searchsorted(edges, 0.0, side="right"))] = 1.0
            return w, 1.0
        lo, hi = c, 2.0 * c
        bounds = np.concatenate([[-np.inf], edges, [np.inf]])
        left = np.clip(bounds[:-1], lo, hi)
        right = np.clip(bounds[1:], lo, hi)
        w = right - left
        return w, c

    def staircase(self, c1: float, c2: float, tau: float) -> float:
        i = [int(np.searchsorted(self.axes[j], v, side="right")) for j, v in enumerate((c1, c2, tau))]
        return float(self.grid[i[0], i[1], i[2]])

    def __call__(self, c1: float, c2: float, tau: float) -> float:
        # normalize per axis so tiny arguments do not underflow the product
        w1, w2, w3 = (w / d for w, d in (self._weights(j, v) for j, v in enumerate((c1, c2, tau))))
        avg = float(np.einsum("i,j,k,ijk->", w1, w2, w3, self.grid))
        return avg + c1 * c2 * tau

    def certify(self, grid: Sequence[float] = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)) -> CheckReport:
        """Monotonicity in each argument on a test grid."""
        report = CheckReport("BRS-envelope-monotone")
        g = list(grid)
        vals = np.array([[[self(a, b, c) for c in g] for b in g] for a in g])
        for ax in range(3):
            d = np.diff(vals, axis=ax)
            report.record(float(-d.min()))
            if d.min() < -1e-12:
                report.add(Violation(ax, "", [], float(d.min()), 0.0, {"axis": ax}))
        return report.finalize()


def brs_envelope(samples: Sequence[tuple[float, float, float, float]]) -> BRSEnvelope:
    return BRSEnvelope(samples)


def brs_samples(runs: Sequence[Run], stride: int = 1) -> list[tuple[float, float, float, float]]:
    """``(V(x0), ||u||, t, V(x_t))`` tuples from simulation runs."""
    out = []
    for r in runs:
        for t, v in zip(r.ts[::stride], r.vs[::stride]):
            out.append((r.v0, r.u_norm, float(t), float(v)))
    return out


# ---------------------------------------------------------------- continuity at the equilibrium

def cep_check(sys: DelaySystem, V: LKFCandidate, eps: float, h: float, space: SampleSpace,
              step: float | None = None, iters: int = 40, delta_max: float | None = None
              ) -> tuple[float, CheckReport]:
    """Largest sampled ``delta`` with ``V(x0), ||u|| <= delta => sup_{t<=h} V(x_t) <= eps``.

    Sample 0 is scaled to ``V(x0) = delta`` exactly, the others to random
    fractions of ``delta``. The answer is found by bisection.
    """
    if h <= 0:
        raise DomainError("h must be positive")
    step = min(sys.theta / 100 if step is None else step, h / 4)
    delta_max = 10.0 * eps if delta_max is None else delta_max

    def worst(delta: float) -> tuple[float, int]:
        xs = _gated_histories(V, space, delta, False)
        amp = min(space.input_amplitude, delta)
        w, wi = -math.inf, -1
        for i, x0 in enumerate(xs):
            run = simulate(sys, V, x0, _input_for(space, i, h, amp), h, step, i)
            val = math.inf if run.escaped else refined_max(run.ts, run.vs)
            if val > w:
                w, wi = val, i
        return w, wi

    lo, hi = 0.0, delta_max
    if worst(hi)[0] <= eps:
        lo = hi
    else:
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if worst(mid)[0] <= eps:
                lo = mid
            else:
                hi = mid
    report = CheckReport("V-CEP")
    w, wi = worst(lo) if lo > 0 else (0.0, -1)
    report.record(w - eps)
    report.details.update(delta_hat=lo, eps=eps, h=h, worst_index=wi, delta_max=delta_max)
    return lo, report.finalize()

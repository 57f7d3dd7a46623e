"""The scalar example ``x' = -x(t) + x(t-1) - psi(x(t)^2 - u(t)^2) x(t)``.

The module houses the concrete bump ``psi``, the closed form of the
driver derivative of ``V_{c,kappa}``, the counterexample histories and
the orchestration of the six verdicts about this system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import comparison as cf
from .certify import ConditionKind, check_condition
from .comparison import ComparisonFn, Kind
from .dynamics import DelaySystem, InputSignal
from .errors import ConfigError, ConstructionFailed
from .estimate import fit_iss_kl, simulate, viss_to_iss
from .history import HistoryFunction, constant, from_samples
from .lkf import DEFAULT_H, driver_derivative, eval_lkf, quad_exp, weighted_integral
from .reports import CheckReport, Violation
from .sampling import SampleSpace

ITEMS = ("i", "ii", "iii", "iv", "v", "vi")
CK_GRID = tuple((c, k) for c in (0.0, 0.5, 1.0) for k in (0.5, 1.0, 2.0) if (c, k) != (0.0, 1.0))
DELTAS = (1.0, 0.5, 0.25, 0.125)


class BumpPsi:
    """``psi(s) = exp(-1/s) / (1 + s)^2`` for ``s > 0`` and 0 otherwise.

    Smooth and flat at 0, positive on ``(0, inf)``, with ``psi(s) s -> 0``.
    """

    name = "bump"

    def __call__(self, s):
        arr = np.asarray(s, dtype=float)
        pos = arr > 0
        safe = np.where(pos, arr, 1.0)
        out = np.where(pos, np.exp(-1.0 / safe) / (1.0 + safe) ** 2, 0.0)
        return float(out) if arr.ndim == 0 else out

    @staticmethod
    def scalar(s: float) -> float:
        return math.exp(-1.0 / s) / (1.0 + s) ** 2 if s > 0 else 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "formula": "exp(-1/s)/(1+s)^2 for s>0, else 0"}


def example_system(psi: BumpPsi | None = None) -> DelaySystem:
    """The scalar example with delay 1 and a scalar input."""
    psi = BumpPsi() if psi is None else psi
    p = getattr(psi, "scalar", psi)

    def rhs(phi, u):
        x = float(phi(0.0)[0])
        xd = float(phi(-1.0)[0])
        return -x + xd - p(x * x - float(u[0]) ** 2) * x

    return DelaySystem(1, 1, 1.0, rhs, "example21", params={"psi": psi.to_dict()})


def growth_bound(psi: BumpPsi | None = None) -> ComparisonFn:
    """``xi1(s) = (2 + max psi) s``, so that ``|f(phi, u)| <= xi1(||phi||)``.

    ``max psi = psi(1)`` for the bump: its logarithmic derivative
    ``1/s^2 - 2/(1+s)`` vanishes only at ``s = 1``.
    """
    psi = BumpPsi() if psi is None else psi
    return cf.linear(2.0 + float(psi(1.0)))


def k_constant(c: float, kappa: float) -> float:
    """``K = e^c kappa^2 + 1 - 2 kappa``."""
    return math.exp(c) * kappa * kappa + 1.0 - 2.0 * kappa


def driver_closed_form(phi: HistoryFunction, u_val: float, c: float, kappa: float,
                       psi: BumpPsi | None = None) -> float:
    """Closed-form driver derivative of ``V_{c,kappa}`` along the example."""
    psi = BumpPsi() if psi is None else psi
    if abs(phi.theta - 1.0) > 1e-12:
        raise ConfigError("the example has delay 1")
    x0 = float(phi.values[-1, 0])
    x1 = float(phi.values[0, 0])
    u = float(np.ravel(u_val)[0])
    K = k_constant(c, kappa)
    head = -(2.0 * kappa * psi(x0 * x0 - u * u) - K) * x0 * x0
    square = -(math.exp(c / 2.0) * kappa * x0 - math.exp(-c / 2.0) * x1) ** 2
    return head + square - c * weighted_integral(phi, c)


def psi_tilde(s: float, psi: BumpPsi | None = None, grid: int = 64) -> float:
    """``min psi`` over ``[3 s^2 / 4, s^2]`` by a grid scan refined with a bounded search."""
    psi = BumpPsi() if psi is None else psi
    if s <= 0:
        return 0.0
    lo, hi = 0.75 * s * s, s * s
    xs = np.linspace(lo, hi, grid)
    vals = psi(xs)
    k = int(np.argmin(vals))
    best = float(vals[k])
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
    if b > a:
        res = minimize_scalar(psi, bounds=(a, b), method="bounded", options={"xatol": 1e-12 * hi})
        best = min(best, float(res.fun))
    return best


def alpha_example(psi: BumpPsi | None = None) -> ComparisonFn:
    """``alpha(s) = 2 psi~(s) s^2``; positive definite but bounded."""
    psi = BumpPsi() if psi is None else psi
    f = np.vectorize(lambda s: 2.0 * psi_tilde(float(s), psi) * float(s) ** 2, otypes=[float])
    return ComparisonFn(f, Kind.PD, 1e3, "2*psi_tilde(s)*s^2")


def taylor_scan(psi: BumpPsi | None = None, C: float = 1.0, cap: float = 10.0, n: int = 20001) -> float:
    """Largest ``M <= cap`` with ``psi(s) <= C s^2`` on a grid of ``(0, M]``."""
    psi = BumpPsi() if psi is None else psi
    s = np.linspace(cap / n, cap, n)
    bad = np.flatnonzero(psi(s) > C * s * s)
    return float(cap if bad.size == 0 else (s[bad[0] - 1] if bad[0] > 0 else 0.0))


def _hermite(taus, vals) -> HistoryFunction:
    taus = np.asarray(taus, dtype=float)
    return from_samples(taus, np.asarray(vals, dtype=float)[:, None], np.zeros((taus.size, 1)))


def counterexample_phi(c: float, kappa: float, psi: BumpPsi | None = None, C: float = 1.0
                       ) -> HistoryFunction:
    """History with a strictly positive driver derivative at zero input.

    ``phi(0) = a`` is small enough that ``a^2 <= M`` and ``6 kappa C a^4 <= K``,
    ``phi(-1) = e^c kappa a`` cancels the square term, and the interior keeps
    ``3 c int e^{cs} phi^2 <= K a^2``. A monotone cubic bridge is tried
    first; when its integral is too large the bridge dips to 0 in between.
    """
    psi = BumpPsi() if psi is None else psi
    if kappa <= 0:
        raise ConstructionFailed("kappa must be positive")
    K = k_constant(c, kappa)
    if K <= 0:
        raise ConstructionFailed(f"K = {K} is not positive at (c, kappa) = ({c}, {kappa})")
    M = taylor_scan(psi, C)
    if M <= 0:
        raise ConstructionFailed("no quadratic domination of psi near 0")
    a = 0.5 * min(math.sqrt(M), (K / (6.0 * kappa * C)) ** 0.25, 1.0)
    b = math.exp(c) * kappa * a

    def ok(phi):
        return 3.0 * c * weighted_integral(phi, c) <= K * a * a

    phi = _hermite([-1.0, 0.0], [b, a])
    w = 0.25
    while not ok(phi):
        if w < 1e-9:
            raise ConstructionFailed("could not shrink the interior integral")
        phi = _hermite([-1.0, -1.0 + w, -w, 0.0], [b, 0.0, 0.0, a])
        w *= 0.5
    if driver_closed_form(phi, 0.0, c, kappa, psi) <= 0:
        raise ConstructionFailed("constructed history has non-positive derivative")
    return phi


# ---------------------------------------------------------------- verdicts

@dataclass
class Prop5Config:
    """Settings for :func:`run_prop5`."""

    seed: int = 0
    samples: int = 40
    history_amplitude: float = 3.0
    input_amplitude: float = 2.0
    grid: tuple = CK_GRID
    deltas: tuple = DELTAS
    T: float = 20.0
    step: float = 0.01
    fit_samples: int = 40
    holdout_samples: int = 20
    tol: float = 1e-7
    chi_slope: float = 2.0
    h_seq: tuple = DEFAULT_H
    radii: tuple = (1.0, 10.0, 100.0, 1000.0)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _report(item: str, expected: str) -> CheckReport:
    rep = CheckReport(f"example/item-{item}")
    rep.details.update(item=item, expected=expected)
    return rep


def _close(rep: CheckReport, mismatches: int, observed: str) -> CheckReport:
    rep.details.update(mismatches=mismatches, verdict=observed)
    rep.status = "pass" if mismatches == 0 else "fail"
    return rep.finalize()


def _item_i(cfg: Prop5Config, psi: BumpPsi) -> CheckReport:
    rep = _report("i", "holds")
    sys = example_system(psi)
    V = quad_exp(0.0, 1.0)
    space = SampleSpace(cfg.seed, cfg.history_amplitude, "random-cubic-spline",
                        cfg.input_amplitude, cfg.samples)
    ugs = check_condition(ConditionKind.UGS, sys, V, None, cf.zero(), space, cfg.tol, cfg.h_seq)
    impl = check_condition(ConditionKind.IMPL_POINTWISE, sys, V, alpha_example(psi),
                           cf.linear(cfg.chi_slope), space, cfg.tol, cfg.h_seq)
    # closed form agrees with the numeric estimate on every sample
    worst = 0.0
    for i in range(space.sample_count):
        phi, u = space.sample(i)
        cl = driver_closed_form(phi, u, 0.0, 1.0, psi)
        est = driver_derivative(V, phi, sys.f(phi, u), cfg.h_seq)
        worst = max(worst, abs(cl - est.limit) - max(1e-4, 10 * est.tol))
        rep.record(cl)
    agree = worst <= 0
    rep.details.update(ugs=ugs.to_dict(), implication=impl.to_dict(), closed_form_agreement=agree)
    mismatches = int(not ugs.passed) + int(not impl.passed) + int(not agree)
    return _close(rep, mismatches, "holds" if mismatches == 0 else "violated")


def _item_ii(cfg: Prop5Config, psi: BumpPsi) -> CheckReport:
    rep = _report("ii", "holds")
    sys = example_system(psi)
    V = quad_exp(0.0, 1.0)
    train = SampleSpace(cfg.seed, 1.0, "random-cubic-spline", 0.0, cfg.fit_samples)
    hold = train.with_(seed=cfg.seed + 1000, sample_count=cfg.holdout_samples)
    beta, gamma, fit = fit_iss_kl(sys, V, train, cfg.T, cfg.step, holdout=hold)
    # norm-level bound: ||x_t|| <= psi1^{-1}(beta(psi2(||x0||), t)) shifted by theta
    psi1_inv = cf.inverse(V.psi1)
    psi2 = V.psi2

    def pointwise(r, t):
        return np.asarray(psi1_inv(np.asarray(beta(psi2(r), t))))

    norm_beta = viss_to_iss(cf.KLFn(pointwise, "pointwise"), sys.theta)
    norm_rep = CheckReport("norm-level-bound")
    for i in range(hold.sample_count):
        run = simulate(sys, V, hold.history(i), InputSignal.zero(), cfg.T, cfg.step, i)
        ts = run.ts[run.ts >= sys.theta]
        # ||x_t|| is the max of |x| over the window [t - theta, t]
        xs = np.abs(run.traj.eval(run.ts)).ravel()
        r0 = run.x0.sup_norm()
        bound = np.asarray(norm_beta(r0, ts))
        lhs = np.array([xs[(run.ts >= t - sys.theta - 1e-12) & (run.ts <= t + 1e-12)].max() for t in ts])
        margin = lhs - bound
        k = int(np.argmax(margin))
        norm_rep.record(float(margin[k]))
        if margin[k] > 0:
            norm_rep.add(Violation(i, run.x0.to_csv(), [0.0], float(lhs[k]), float(bound[k]), {"t": float(ts[k])}))
    norm_rep.finalize()
    rep.details.update(fit=fit.to_dict(), norm_bound=norm_rep.to_dict(), gain_zero=bool(gamma.is_zero))
    mismatches = int(not fit.residual.passed) + int(not norm_rep.passed) + int(not gamma.is_zero)
    return _close(rep, mismatches, "holds" if mismatches == 0 else "violated")


def _numeric(V, sys, phi, u, h_seq):
    return driver_derivative(V, phi, sys.f(phi, u), h_seq)


def _item_iii(cfg: Prop5Config, psi: BumpPsi) -> CheckReport:
    rep = _report("iii", "expected-fail")
    sys = example_system(psi)
    mismatches = 0
    rows = []
    for c, kappa in cfg.grid:
        V = quad_exp(c, kappa)
        phi = counterexample_phi(c, kappa, psi)
        for d in cfg.deltas:
            p = phi.map_values(d)
            cl = driver_closed_form(p, 0.0, c, kappa, psi)
            est = _numeric(V, sys, p, 0.0, cfg.h_seq)
            confirmed = cl > 0 and est.limit > 10 * est.tol
            rows.append({"c": c, "kappa": kappa, "delta": d, "closed_form": cl, "numeric": est.limit,
                         "confirmed": bool(confirmed)})
            rep.record(-cl)
            if not confirmed:
                mismatches += 1
                rep.add(Violation(len(rows) - 1, p.to_csv(), [0.0], cl, 0.0, {"c": c, "kappa": kappa}))
    rep.details.update(witnesses=rows, note="positivity checked on a finite delta grid")
    return _close(rep, mismatches, "expected-fail-confirmed" if mismatches == 0 else "mismatch")


def _item_iv(cfg: Prop5Config, psi: BumpPsi) -> CheckReport:
    rep = _report("iv", "expected-fail")
    sys = example_system(psi)
    # vanishes at both ends, nonzero inside
    phi = _hermite([-1.0, -0.5, 0.0], [0.0, 1.0, 0.0])
    mismatches = 0
    rows = []
    kappas = sorted({k for c, k in cfg.grid if c == 0.0} | {1.0})
    for kappa in kappas:
        V = quad_exp(0.0, kappa)
        v = eval_lkf(V, phi)
        cl = driver_closed_form(phi, 0.0, 0.0, kappa, psi)
        est = _numeric(V, sys, phi, 0.0, cfg.h_seq)
        tol = max(cfg.tol, 10 * est.tol)
        # any decay rate alpha(V) > 0 would need a negative derivative here
        confirmed = v > 0 and abs(cl) <= 1e-12 and abs(est.limit) <= tol
        rows.append({"c": 0.0, "kappa": kappa, "V": v, "closed_form": cl, "numeric": est.limit,
                     "confirmed": bool(confirmed)})
        rep.record(-v)
        if not confirmed:
            mismatches += 1
    rep.details.update(witnesses=rows, phi=phi.to_csv())
    return _close(rep, mismatches, "expected-fail-confirmed" if mismatches == 0 else "mismatch")


def _item_v(cfg: Prop5Config, psi: BumpPsi) -> CheckReport:
    rep = _report("v", "expected-fail")
    sys = example_system(psi)
    V = quad_exp(0.0, 1.0)
    chi = cf.linear(cfg.chi_slope)
    mismatches = 0
    rows = []
    for a in (0.25, 0.5, 1.0, 2.0):
        # endpoints equal to the input, interior raised until V(phi) >= chi(|u|)
        amp = a
        while True:
            phi = _hermite([-1.0, -0.5, 0.0], [a, amp, a])
            if eval_lkf(V, phi) >= float(chi(a)):
                break
            amp *= 1.5
        v = eval_lkf(V, phi)
        cl = driver_closed_form(phi, a, 0.0, 1.0, psi)
        est = _numeric(V, sys, phi, a, cfg.h_seq)
        tol = max(cfg.tol, 10 * est.tol)
        confirmed = v >= float(chi(a)) and abs(cl) <= 1e-12 and abs(est.limit) <= tol
        rows.append({"a": a, "V": v, "chi": float(chi(a)), "closed_form": cl, "numeric": est.limit,
                     "confirmed": bool(confirmed)})
        rep.record(-v)
        if not confirmed:
            mismatches += 1
    rep.details.update(witnesses=rows)
    return _close(rep, mismatches, "expected-fail-confirmed" if mismatches == 0 else "mismatch")


def _item_vi(cfg: Prop5Config, psi: BumpPsi) -> CheckReport:
    rep = _report("vi", "expected-fail")
    sys = example_system(psi)
    V = quad_exp(0.0, 1.0)
    rows = []
    h_seq = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
    for r in cfg.radii:
        phi = constant(np.array([r]))
        cl = driver_closed_form(phi, 0.0, 0.0, 1.0, psi)
        est = _numeric(V, sys, phi, 0.0, h_seq)
        rows.append({"r": r, "closed_form": cl, "numeric": est.limit, "tol": est.tol})
    mags = [abs(row["closed_form"]) for row in rows]
    decreasing = all(b < a for a, b in zip(mags, mags[1:]))
    small = mags[-1] < 1e-3 * mags[0]
    agree = all(abs(row["closed_form"] - row["numeric"]) <= max(1e-6, 10 * row["tol"]) for row in rows)
    mismatches = int(not decreasing) + int(not small) + int(not agree)
    for m in mags:
        rep.record(m)
    rep.details.update(trend=rows, decreasing=decreasing, vanishing=small, closed_form_agreement=agree)
    return _close(rep, mismatches, "expected-fail-confirmed" if mismatches == 0 else "mismatch")


_ITEM_FUNCS = {"i": _item_i, "ii": _item_ii, "iii": _item_iii, "iv": _item_iv, "v": _item_v, "vi": _item_vi}


def run_prop5(item: str = "all", config: Prop5Config | None = None,
              psi: BumpPsi | None = None) -> CheckReport:
    """Reproduce one verdict (or all six) about the example system.

    Items i and ii are expected to hold; items iii to vi are expected to
    fail, and pass here when a witness confirms the failure.
    """
    cfg = Prop5Config() if config is None else config
    psi = BumpPsi() if psi is None else psi
    if item == "all":
        rep = _report("all", "per item")
        subs = {k: _ITEM_FUNCS[k](cfg, psi) for k in ITEMS}
        mismatches = sum(s.details["mismatches"] for s in subs.values())
        rep.details["items"] = {k: s.to_dict() for k, s in subs.items()}
        for k, s in subs.items():
            if not s.passed:
                rep.add(Violation(ITEMS.index(k), "", [], float(s.details["mismatches"]), 0.0, {"item": k}))
        return _close(rep, mismatches, "all-match" if mismatches == 0 else "mismatch")
    if item not in _ITEM_FUNCS:
        raise ConfigError(f"unknown item {item!r}")
    return _ITEM_FUNCS[item](cfg, psi)

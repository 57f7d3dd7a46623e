"""Sampled certification and falsification of LKF dissipation conditions.

Every check reduces to constant input values: for a sample ``(phi, u)``
the Driver derivative of ``V`` with drift ``f(phi, u)`` is compared
with the bound of the chosen condition, provided the gate holds.

================  =======================  ==========================
kind              gate                     bound on ``D+V``
================  =======================  ==========================
impl-lkfwise      ``V >= chi(|u|)``        ``-alpha(V)``
impl-pointwise    ``|phi(0)| >= chi(|u|)`` ``-alpha(|phi(0)|)``
diss-lkfwise      none                     ``-alpha(V) + chi(|u|)``
diss-pointwise    none                     ``-alpha(|phi(0)|) + chi(|u|)``
ugs               ``V >= chi(|u|)``        ``0``
klw               ``V >= chi(|u|)``        ``-alpha(|phi(0)|)``
local-decay       ``u = 0``                ``0``
================  =======================  ==========================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .comparison import ComparisonFn
from .dynamics import DelaySystem
from .history import HistoryFunction, constant
from .lkf import DEFAULT_H, DerivativeEstimate, LKFCandidate, driver_derivative, eval_lkf
from .reports import CheckReport, Violation
from .sampling import SampleSpace, spline_history

DEFAULT_TOL = 1e-7


class ConditionKind(str, enum.Enum):
    IMPL_LKFWISE = "impl-lkfwise"
    IMPL_POINTWISE = "impl-pointwise"
    DISS_LKFWISE = "diss-lkfwise"
    DISS_POINTWISE = "diss-pointwise"
    UGS = "ugs"
    KLW = "klw"
    LOCAL_DECAY = "local-decay"


# descriptive identifiers carried into reports
CONDITION_IDS = {
    ConditionKind.IMPL_LKFWISE: "implication-form/LKF-wise-dissipation",
    ConditionKind.IMPL_POINTWISE: "implication-form/pointwise-dissipation",
    ConditionKind.DISS_LKFWISE: "dissipative-form/LKF-wise-dissipation",
    ConditionKind.DISS_POINTWISE: "dissipative-form/pointwise-dissipation",
    ConditionKind.UGS: "UGS-LKF",
    ConditionKind.KLW: "LKF-gated/pointwise-dissipation",
    ConditionKind.LOCAL_DECAY: "zero-input/local-decay",
}


def _val(f: ComparisonFn | None, s: float) -> float:
    return 0.0 if f is None else float(f(s))


@dataclass
class SampleOutcome:
    gated: bool
    lhs: float
    rhs: float
    estimate: DerivativeEstimate | None
    v: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs if self.gated else -math.inf


def evaluate_sample(kind: ConditionKind | str, sys: DelaySystem, V: LKFCandidate,
                    alpha: ComparisonFn | None, chi: ComparisonFn | None,
                    phi: HistoryFunction, u, h_seq: Sequence[float] = DEFAULT_H) -> SampleOutcome:
    """Gate, estimated ``D+V`` and bound for one ``(phi, u)``."""
    kind = ConditionKind(kind)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if kind is ConditionKind.LOCAL_DECAY:
        u = np.zeros_like(u)
    v = eval_lkf(V, phi)
    head = float(np.linalg.norm(phi.values[-1]))
    un = float(np.linalg.norm(u))
    if kind in (ConditionKind.IMPL_LKFWISE, ConditionKind.UGS, ConditionKind.KLW):
        gated = v >= _val(chi, un)
    elif kind is ConditionKind.IMPL_POINTWISE:
        gated = head >= _val(chi, un)
    else:
        gated = True
    if kind is ConditionKind.LOCAL_DECAY:
        gated = head > 0
    if not gated:
        return SampleOutcome(False, math.nan, math.nan, None, v)
    bound = {
        ConditionKind.IMPL_LKFWISE: lambda: -_val(alpha, v),
        ConditionKind.IMPL_POINTWISE: lambda: -_val(alpha, head),
        ConditionKind.DISS_LKFWISE: lambda: -_val(alpha, v) + _val(chi, un),
        ConditionKind.DISS_POINTWISE: lambda: -_val(alpha, head) + _val(chi, un),
        ConditionKind.UGS: lambda: 0.0,
        ConditionKind.KLW: lambda: -_val(alpha, head),
        ConditionKind.LOCAL_DECAY: lambda: 0.0,
    }[kind]()
    est = driver_derivative(V, phi, sys.f(phi, u), h_seq, v0=v)
    return SampleOutcome(True, est.limit, bound, est, v)


def _effective_tol(tol: float, est: DerivativeEstimate | None) -> float:
    return max(tol, 10.0 * est.tol) if est is not None else tol


def check_condition(kind: ConditionKind | str, sys: DelaySystem, V: LKFCandidate,
                    alpha: ComparisonFn | None, chi: ComparisonFn | None, space: SampleSpace,
                    tol: float = DEFAULT_TOL, h_seq: Sequence[float] = DEFAULT_H) -> CheckReport:
    """Sampled check of one dissipation condition; violations carry witnesses."""
    kind = ConditionKind(kind)
    report = CheckReport(CONDITION_IDS[kind])
    gated_idx = []
    unconverged = []
    for i in range(space.sample_count):
        phi, u = space.sample(i)
        out = evaluate_sample(kind, sys, V, alpha, chi, phi, u, h_seq)
        if not out.gated:
            continue
        gated_idx.append(i)
        if not out.estimate.converged:
            unconverged.append(i)
        eff = _effective_tol(tol, out.estimate)
        report.record(out.margin)
        if out.margin > eff:
            report.add(Violation(i, phi.to_csv(), u.tolist(), out.lhs, out.rhs,
                                 {"derivative": out.estimate.to_dict(), "tol": eff}))
    report.details.update(kind=kind.value, gated=len(gated_idx), gated_indices=gated_idx,
                          unconverged_indices=unconverged, tol=tol,
                          system=sys.name, lkf=V.name, space=space.to_dict())
    return report.finalize()


# ---------------------------------------------------------------- falsification

@dataclass
class Witness:
    phi: HistoryFunction
    u: np.ndarray
    lhs: float
    rhs: float
    evaluations: int
    estimate: DerivativeEstimate | None = None

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    def to_dict(self) -> dict:
        return {"phi_csv": self.phi.to_csv(), "u": np.asarray(self.u).tolist(), "lhs": self.lhs,
                "rhs": self.rhs, "margin": self.margin, "evaluations": self.evaluations,
                "derivative": self.estimate.to_dict() if self.estimate else None}


def falsify(kind: ConditionKind | str, sys: DelaySystem, V: LKFCandidate, alpha: ComparisonFn | None,
            chi: ComparisonFn | None, budget: int = 400, space: SampleSpace | None = None,
            tol: float = DEFAULT_TOL, h_seq: Sequence[float] = DEFAULT_H,
            iterations: int = 20) -> Witness | None:
    """Search for a violation: seeded random splines, then coordinate descent.

    Half of the budget goes to random samples. The best gated sample is
    then refined over its spline control values and the input value with
    a step that halves whenever a sweep brings no improvement.
    """
    if budget < 100:
        raise ValueError("falsification budget must be at least 100 evaluations")
    kind = ConditionKind(kind)
    if space is None:
        space = SampleSpace(seed=0, history_amplitude=2.0, input_amplitude=1.0,
                            sample_count=budget, theta=sys.theta, n=sys.n, m=max(sys.m, 1))
    space = space.with_(history_generator="random-cubic-spline")
    evals = 0

    def score(ctrl, u):
        nonlocal evals
        evals += 1
        phi = spline_history(ctrl, space.theta)
        out = evaluate_sample(kind, sys, V, alpha, chi, phi, u, h_seq)
        return out, phi

    def is_witness(out: SampleOutcome) -> bool:
        return out.gated and out.margin > _effective_tol(tol, out.estimate)

    def make(out, phi, u):
        return Witness(phi, np.atleast_1d(np.asarray(u, dtype=float)), out.lhs, out.rhs, evals, out.estimate)

    best = None
    for i in range(budget // 2):
        ctrl = space.controls(i)
        u = space.input_value(i)
        out, phi = score(ctrl, u)
        if is_witness(out):
            return make(out, phi, u)
        if out.gated and (best is None or out.margin > best[0].margin):
            best = (out, ctrl, u)
    if best is None:
        return None
    out, ctrl, u = best
    ctrl = ctrl.copy()
    u = np.atleast_1d(np.asarray(u, dtype=float)).copy()
    step = max(space.history_amplitude, 1e-3) / 4.0
    for _ in range(iterations):
        improved = False
        coords = [("c", idx) for idx in np.ndindex(ctrl.shape)] + [("u", j) for j in range(u.size)]
        for which, idx in coords:
            for sgn in (1.0, -1.0):
                if evals >= budget:
                    return None
                c2, u2 = ctrl.copy(), u.copy()
                if which == "c":
                    c2[idx] += sgn * step
                else:
                    u2[idx] += sgn * step
                o2, phi2 = score(c2, u2)
                if is_witness(o2):
                    return make(o2, phi2, u2)
                if o2.gated and o2.margin > out.margin:
                    out, ctrl, u = o2, c2, u2
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return None


# ---------------------------------------------------------------- growth method

@dataclass(frozen=True)
class GrowthSpec:
    """Data of the growth-restriction method: ``Q`` with gradient and three gains."""

    Q: Callable[[np.ndarray], np.ndarray]
    grad_Q: Callable[[np.ndarray], np.ndarray]
    alpha: ComparisonFn
    gamma: ComparisonFn
    sigma: ComparisonFn
    theta: float = 1.0

    @classmethod
    def quadratic(cls, alpha, gamma, sigma, theta: float = 1.0) -> GrowthSpec:
        """``Q(x) = |x|^2``."""
        return cls(lambda x: np.sum(np.atleast_2d(x) ** 2, axis=-1),
                   lambda x: 2.0 * np.asarray(x, dtype=float), alpha, gamma, sigma, theta)

    def spot_check(self, n: int = 1) -> bool:
        """``Q(0) = 0``, ``Q > 0`` off zero and growth along a ray."""
        zero = float(np.ravel(self.Q(np.zeros((1, n))))[0])
        ray = np.geomspace(1e-3, 1e3, 13)[:, None] * np.ones((1, n)) / math.sqrt(n)
        q = np.ravel(self.Q(ray))
        return zero == 0.0 and bool(np.all(q > 0)) and bool(np.all(np.diff(q) > 0))


def growth_limit_trend(alpha: ComparisonFn, sigma: ComparisonFn, theta: float,
                       cap: float | None = None, points: int = 41, spread: float = 0.05) -> tuple[str, dict]:
    """Estimate ``lim alpha(s) / sigma(s e^theta)`` on a geometric grid.

    Returns ``("pass" | "fail" | "inconclusive", data)``. The tail is the
    last quarter of the grid; a tail maximum below 1e-10 counts as a zero
    limit, a tail whose relative spread is within ``spread`` and whose
    minimum is positive counts as a positive limit.
    """
    cap = cap if cap is not None else min(alpha.domain_cap, sigma.domain_cap / math.exp(theta))
    s = np.geomspace(1.0, max(cap, 10.0), points)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.asarray(alpha(s), dtype=float) / np.asarray(sigma(s * math.exp(theta)), dtype=float)
    tail = ratio[-max(points // 4, 2):]
    data = {"s": s.tolist(), "ratio": ratio.tolist()}
    if not np.all(np.isfinite(tail)):
        return "inconclusive", data
    if tail.max() < 1e-10:
        return "fail", data
    if tail.min() > 0 and (tail.max() - tail.min()) <= spread * tail.max():
        return "pass", data
    return "inconclusive", data


def check_growth_method(sys: DelaySystem, V: LKFCandidate, gs: GrowthSpec, space: SampleSpace,
                        tol: float = DEFAULT_TOL, rays: Sequence[float] = (1.0, 10.0, 100.0, 1000.0),
                        h_seq: Sequence[float] = DEFAULT_H) -> CheckReport:
    """Three sub-checks of the growth-restriction method.

    (a) ``D+V <= -alpha(Q(phi(0))) + gamma(|u|)`` on samples and on
    scaled constant histories ``r * 1`` with zero input; (b) the gradient
    bound ``grad Q(phi(0)) . f <= sigma(max Q(phi)) + gamma(|u|)``;
    (c) the limit condition via :func:`growth_limit_trend`.
    """
    report = CheckReport("growth-restriction-method")
    viol_a, viol_b = [], []
    n = sys.n
    probes = [(i, *space.sample(i)) for i in range(space.sample_count)]
    ray_probes = [(-(k + 1), constant(np.full(n, r / math.sqrt(n)), sys.theta), np.zeros(max(sys.m, 1)))
                  for k, r in enumerate(rays)]
    for i, phi, u in probes + ray_probes:
        u = np.atleast_1d(u)
        un = float(np.linalg.norm(u))
        head = phi.values[-1]
        drift = sys.f(phi, u)
        est = driver_derivative(V, phi, drift, h_seq)
        q0 = float(np.ravel(gs.Q(head[None, :]))[0])
        rhs = -float(gs.alpha(q0)) + float(gs.gamma(un))
        eff = _effective_tol(tol, est)
        report.record(est.limit - rhs)
        if est.limit - rhs > eff:
            v = Violation(i, phi.to_csv(), u.tolist(), est.limit, rhs, {"subcheck": "a"})
            viol_a.append(v)
            report.add(v)
        _, dense = phi.dense_samples(16)
        qmax = float(np.max(gs.Q(dense)))
        lhs_b = float(np.dot(gs.grad_Q(head), drift))
        rhs_b = float(gs.sigma(qmax)) + float(gs.gamma(un))
        if lhs_b > rhs_b + tol * max(1.0, abs(rhs_b)):
            v = Violation(i, phi.to_csv(), u.tolist(), lhs_b, rhs_b, {"subcheck": "b"})
            viol_b.append(v)
            report.add(v)
    status_c, data_c = growth_limit_trend(gs.alpha, gs.sigma, gs.theta)
    report.details.update(
        subchecks={"a": "fail" if viol_a else "pass", "b": "fail" if viol_b else "pass", "c": status_c},
        limit_trend=data_c, q_spot_check=gs.spot_check(n), rays=list(rays))
    if viol_a or viol_b or status_c == "fail":
        report.status = "fail"
    elif status_c == "inconclusive":
        report.status = "inconclusive"
    else:
        report.status = "pass"
    return report.finalize()

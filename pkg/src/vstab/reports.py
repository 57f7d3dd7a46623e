"""Check reports shared by the certification and estimation modules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

REPORT_SCHEMA_VERSION = "1"


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    return x


def dumps(obj: Any) -> str:
    """Deterministic JSON text (sorted keys, fixed float repr)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2)


@dataclass
class Violation:
    """One failing sample. ``margin = lhs - rhs`` is positive for violations."""

    index: int
    phi_csv: str
    u: list
    lhs: float
    rhs: float
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    def to_dict(self) -> dict:
        return {"index": self.index, "phi_csv": self.phi_csv, "u": self.u,
                "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, **self.extra}


@dataclass
class CheckReport:
    """Outcome of a sampled check.

    ``status`` is ``"pass"`` or ``"fail"`` unless a sub-check could not
    decide, in which case it is ``"inconclusive"``. ``passed`` is true
    exactly when there are no violations and the status is not failed.
    """

    condition_id: str
    samples_tested: int = 0
    violations: list[Violation] = field(default_factory=list)
    worst_margin: float = -math.inf
    details: dict = field(default_factory=dict)
    status: str | None = None
    evidence: str = "sampled evidence"

    @property
    def passed(self) -> bool:
        if self.status is not None:
            return self.status == "pass"
        return not self.violations

    def record(self, margin: float) -> None:
        self.samples_tested += 1
        if margin > self.worst_margin:
            self.worst_margin = float(margin)

    def add(self, violation: Violation) -> None:
        self.violations.append(violation)

    def finalize(self) -> CheckReport:
        self.violations.sort(key=lambda v: v.index)
        if self.status is None:
            self.status = "pass" if not self.violations else "fail"
        return self

    def to_dict(self) -> dict:
        return {
            "condition_id": self.condition_id,
            "pass": self.passed,
            "status": self.status or ("pass" if self.passed else "fail"),
            "samples": self.samples_tested,
            "worst_margin": self.worst_margin,
            "violations": [v.to_dict() for v in self.violations],
            "details": self.details,
            "evidence": self.evidence,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

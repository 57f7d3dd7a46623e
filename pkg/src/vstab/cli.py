"""Command-line front end.

Every subcommand reads an optional JSON config, lets flags override it,
writes ``report.json`` (plus CSV artifacts) to the output directory and
prints a one-line verdict. Exit codes: 0 pass, 1 violation or witness
found, 2 configuration or runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import comparison as cf
from .certify import CONDITION_IDS, ConditionKind, check_condition, falsify
from .dynamics import DelaySystem, InputSignal, integrate, linear_delay_system, zero_system
from .errors import VStabError
from .estimate import (brs_envelope, brs_samples, cep_check, estimate_uag, estimate_ugs, estimate_ulim,
                       fit_iss_kl, simulate)
from .example import ITEMS, Prop5Config, alpha_example, example_system, run_prop5
from .history import HistoryFunction, constant
from .lkf import LKFCandidate, exponential_trick, lkf_along, quad_exp, squared_norm, sup_norm_lkf
from .reports import dumps
from .sampling import SampleSpace

SCHEMA_VERSION = 1
OUTPUT_ENV = "VSTAB_OUTPUT_DIR"

DEFAULTS: dict = {
    "seed": 0,
    "system": {"name": "example21"},
    "lkf": {"family": "quadexp", "c": 0.0, "kappa": 1.0},
    "alpha": None,
    "chi": None,
    "space": {"history_amplitude": 1.0, "history_generator": "random-cubic-spline",
              "input_amplitude": 1.0, "sample_count": 40},
    "solver": {"step": 0.01, "T": 20.0, "blowup_cap": 1e8},
    "params": {},
}


class ConfigProblem(VStabError):
    """Invalid or inconsistent run configuration."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    """Defaults, then the file, then command-line overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigProblem(f"cannot read config {path}: {exc}") from exc
    cfg = _merge(cfg, overrides)
    if not isinstance(cfg.get("seed"), int):
        raise ConfigProblem("seed must be an integer")
    return cfg


def build_system(spec: dict) -> DelaySystem:
    spec = dict(spec)
    name = spec.pop("name", None)
    if name == "example21":
        return example_system()
    if name == "linear-delay":
        return linear_delay_system(**spec)
    if name == "zero":
        return zero_system(**spec)
    raise ConfigProblem(f"unknown system {name!r}")


def build_lkf(spec: dict, theta: float) -> LKFCandidate:
    spec = dict(spec)
    fam = spec.pop("family", "quadexp")
    if fam == "quadexp":
        return quad_exp(float(spec.get("c", 0.0)), float(spec.get("kappa", 1.0)), theta)
    if fam == "weighted":
        return exponential_trick(squared_norm, squared_norm, float(spec.get("c", 0.0)),
                                 float(spec.get("kappa", 1.0)), theta)
    if fam == "sup-norm":
        return sup_norm_lkf(theta)
    raise ConfigProblem(f"unknown LKF family {fam!r}")


def _fn(spec):
    if spec is None:
        return None
    if isinstance(spec, dict) and spec.get("name") == "example-alpha":
        return alpha_example()
    try:
        return cf.from_spec(spec)
    except (KeyError, TypeError) as exc:
        raise ConfigProblem(f"bad comparison function spec {spec!r}: {exc}") from exc


def build_space(cfg: dict, sys: DelaySystem) -> SampleSpace:
    sp = dict(cfg["space"])
    return SampleSpace(seed=cfg["seed"], theta=sys.theta, n=sys.n, m=max(sys.m, 1), **sp)


# ---------------------------------------------------------------- commands

def _cmd_simulate(cfg, sys, V, space, out):
    solver = cfg["solver"]
    idx = int(cfg["params"].get("sample", 0))
    x0 = space.history(idx)
    if "history_csv" in cfg["params"]:
        x0 = HistoryFunction.from_csv(Path(cfg["params"]["history_csv"]).read_text())
    elif "constant" in cfg["params"]:
        x0 = constant(np.full(sys.n, float(cfg["params"]["constant"])), sys.theta)
    u = InputSignal.constant(np.zeros(max(sys.m, 1)))
    if space.input_amplitude > 0 and cfg["params"].get("input", "random") == "random":
        u = space.input_signal(idx, solver["T"])
    traj = integrate(sys, x0, u, solver["T"], solver["step"], solver.get("blowup_cap", 1e8))
    (out / "trajectory.csv").write_text(traj.to_csv())
    ts, vs = lkf_along(V, traj)
    _write_trace(out / "lkf_trace.csv", ts, vs)
    body = {"t_end": traj.t_end, "escaped": traj.escaped, "escape_time": traj.escape_time,
            "final_state": traj.values[-1].tolist(), "input": u.to_dict()}
    return True, body, "simulated"


def _write_trace(path: Path, ts, vs):
    buf = ["t,V"] + [f"{t:.17g},{v:.17g}" for t, v in zip(ts, vs)]
    path.write_text("\n".join(buf) + "\n")


def _cmd_lkf_eval(cfg, sys, V, space, out):
    rows = ["index,V,head_norm,sup_norm"]
    values = []
    for i in range(space.sample_count):
        phi = space.history(i)
        v = float(V(phi))
        values.append(v)
        rows.append(f"{i},{v:.17g},{np.linalg.norm(phi.head()):.17g},{phi.sup_norm():.17g}")
    (out / "lkf_values.csv").write_text("\n".join(rows) + "\n")
    ok = all(np.isfinite(values)) and min(values) >= 0
    return ok, {"count": len(values), "min": min(values), "max": max(values)}, "evaluated"


def _kind(cfg):
    kind = cfg["params"].get("kind")
    if kind is None:
        raise ConfigProblem("a condition kind is required (--kind)")
    try:
        return ConditionKind(kind)
    except ValueError as exc:
        raise ConfigProblem(f"unknown condition kind {kind!r}") from exc


def _cmd_certify(cfg, sys, V, space, out):
    kind = _kind(cfg)
    rep = check_condition(kind, sys, V, _fn(cfg["alpha"]), _fn(cfg["chi"]), space,
                          float(cfg["params"].get("tol", 1e-7)))
    return rep.passed, rep.to_dict(), rep.status


def _cmd_falsify(cfg, sys, V, space, out):
    kind = _kind(cfg)
    budget = int(cfg["params"].get("budget", 400))
    w = falsify(kind, sys, V, _fn(cfg["alpha"]), _fn(cfg["chi"]), budget,
                space.with_(sample_count=budget), float(cfg["params"].get("tol", 1e-7)))
    if w is None:
        return True, {"condition_id": CONDITION_IDS[kind], "witness": None}, "no witness"
    (out / "witness_history.csv").write_text(w.phi.to_csv())
    return False, {"condition_id": CONDITION_IDS[kind], "witness": w.to_dict()}, "witness found"


def _cmd_estimate(cfg, sys, V, space, out):
    p = cfg["params"]
    prop = p.get("property", "ugs")
    T, step = cfg["solver"]["T"], cfg["solver"]["step"]
    if prop in ("ugs", "ugb"):
        fit = estimate_ugs(sys, V, space, T, step)
        return fit.residual.passed, fit.to_dict(), fit.residual.status
    if prop in ("ulim", "uag", "guag", "mixed-ulim"):
        r, eps = float(p.get("r", 1.0)), float(p.get("eps", 0.1))
        gamma = _fn(p.get("gamma"))
        if prop == "ulim" or prop == "mixed-ulim":
            res = estimate_ulim(sys, V, gamma, eps, r, space, T, step, mixed=prop == "mixed-ulim")
        else:
            res = estimate_uag(sys, V, gamma, eps, r, space, T, prop == "guag", step)
        body = res.fit.to_dict()
        body["times"] = res.times.tolist()
        body["censored"] = res.censored.tolist()
        return not res.censored.any(), body, res.fit.residual.status
    if prop == "iss":
        beta, gamma, fit = fit_iss_kl(sys, V, space, T, step)
        return fit.residual.passed, fit.to_dict(), fit.residual.status
    if prop == "cep":
        delta, rep = cep_check(sys, V, float(p.get("eps", 0.1)), float(p.get("h", 1.0)), space, step)
        return delta > 0, rep.to_dict(), f"delta={delta:.6g}"
    if prop == "brs":
        runs = [simulate(sys, V, space.history(i), space.input_signal(i, T), T, step, i)
                for i in range(space.sample_count)]
        env = brs_envelope(brs_samples(runs, stride=10))
        rep = env.certify()
        return rep.passed, rep.to_dict(), rep.status
    raise ConfigProblem(f"unknown property {prop!r}")


def _cmd_example(cfg, sys, V, space, out):
    p = cfg["params"]
    item = p.get("item", "all")
    if item not in ITEMS + ("all",):
        raise ConfigProblem(f"unknown item {item!r}")
    known = set(Prop5Config.__dataclass_fields__)
    pc = Prop5Config(seed=cfg["seed"], **{k: v for k, v in p.items() if k in known and k != "seed"})
    rep = run_prop5(item, pc)
    if item in ("iii", "vi", "all"):
        # plot data: V along a zero-input run of the example
        ex = example_system()
        run = simulate(ex, quad_exp(0.0, 1.0), space.history(0), InputSignal.zero(), cfg["solver"]["T"],
                       cfg["solver"]["step"])
        _write_trace(out / "lkf_trace.csv", run.ts, run.vs)
    return rep.passed, rep.to_dict(), rep.details.get("verdict", rep.status)


COMMANDS = {
    "simulate": _cmd_simulate,
    "lkf-eval": _cmd_lkf_eval,
    "certify": _cmd_certify,
    "estimate": _cmd_estimate,
    "example": _cmd_example,
    "falsify": _cmd_falsify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./vstab-out)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1, help="worker cap (runs are sequential)")
        p.add_argument("--samples", type=int, help="sample count")
        p.add_argument("--T", type=float, help="horizon")
        p.add_argument("--step", type=float, help="solver step")
        if name in ("certify", "falsify"):
            p.add_argument("--kind", choices=[k.value for k in ConditionKind])
        if name == "falsify":
            p.add_argument("--budget", type=int)
        if name == "estimate":
            p.add_argument("--property", choices=["ugs", "ugb", "ulim", "mixed-ulim", "uag", "guag",
                                                  "iss", "cep", "brs"])
            p.add_argument("--r", type=float)
            p.add_argument("--eps", type=float)
            p.add_argument("--h", type=float)
        if name == "example":
            p.add_argument("--item", choices=list(ITEMS) + ["all"])
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    over: dict = {"params": {}}
    if ns.seed is not None:
        over["seed"] = ns.seed
    if ns.samples is not None:
        over["space"] = {"sample_count": ns.samples}
    solver = {k: getattr(ns, k) for k in ("T", "step") if getattr(ns, k) is not None}
    if solver:
        over["solver"] = solver
    for key in ("kind", "budget", "property", "r", "eps", "h", "item"):
        val = getattr(ns, key, None)
        if val is not None:
            over["params"][key] = val
    return over


def run(argv: Sequence[str] | None = None) -> int:
    """Execute one subcommand; return the exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    out = Path(ns.output_dir or os.environ.get(OUTPUT_ENV) or "vstab-out")
    try:
        if ns.threads < 1:
            raise ConfigProblem("--threads must be at least 1")
        cfg = load_config(ns.config, _overrides(ns))
        sys_ = build_system(cfg["system"])
        V = build_lkf(cfg["lkf"], sys_.theta)
        space = build_space(cfg, sys_)
        out.mkdir(parents=True, exist_ok=True)
        ok, body, verdict = COMMANDS[ns.command](cfg, sys_, V, space, out)
    except (VStabError, ValueError, TypeError, KeyError) as exc:
        msg = {"error": type(exc).__name__, "message": str(exc), "command": ns.command}
        print(json.dumps(msg, sort_keys=True), file=sys.stderr)
        return 2
    report = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "command": ns.command,
        "config": cfg,
        "threads": ns.threads,
        "pass": bool(ok),
        "verdict": verdict,
        "result": body,
        "evidence": "sampled evidence",
    }
    (out / "report.json").write_text(dumps(report) + "\n")
    print(f"{ns.command}: {'PASS' if ok else 'FAIL'} ({verdict}) -> {out / 'report.json'}")
    return 0 if ok else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

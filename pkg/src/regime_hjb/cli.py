"""Command-line front end: ``regime-hjb <command> --config run.json``.

Exit codes: 0 success, 1 configuration or validation error, 2 solver
non-convergence, 3 verification failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import simulate as sim
from .closed_form import QUADRATIC_COST, ClosedForm, build_closed_form, closed_form_for, verify_identity
from .elliptic import (FROM_SUB, FROM_SUPER, RadialGrid, convexity_probe, extract_values,
                       solve_ball)
from .errors import (BracketViolation, NoConvergence, ParamError, PolicyBlowUp, PositiveRoot,
                     SingularMatrix)
from .model import CostCoeffs, GrowthBound, ModelParams, special_lambda, validate_params
from .subsuper import SubCoeffs, b_residual, build_coeffs, check_inequalities, d_residual

log = logging.getLogger("regime_hjb")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3

_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_cost = {"type": "object", "additionalProperties": False,
         "properties": {"p": {"type": "number"}, "s": {"type": "number"}, "q": {"type": "number"}}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer"},
                "k": _pair,
                "a": _pair,
                "lambda": {"oneOf": [_pair, {"const": "special"}]},
                "cost": {"type": "array", "items": _cost, "minItems": 2, "maxItems": 2},
                "growth": _pair,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                          "minItems": 1},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "direction": {"enum": [FROM_SUB, FROM_SUPER]},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "paths": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "x0": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "regime0": {"enum": [1, 2]},
                "discount_mode": {"enum": [sim.AS_WRITTEN, sim.INTEGRATED]},
                "noise": {"enum": ["generator", "literal"]},
                "workers": {"type": "integer", "minimum": 1},
                "policies": {"type": "array", "minItems": 1, "items": {
                    "type": "string",
                    "pattern": r"^(optimal|optimal_closed_form|optimal_numeric|zero|scaled:[-+0-9.eE]+)$"}},
                "checkpoints": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "moment_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "transversality_times": {"type": "array",
                                         "items": {"type": "number", "minimum": 0}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}},
            },
        },
    },
}

DEFAULTS = {
    "model": {"dim": 1, "k": [1.0, 1.0], "a": [1.0, 1.0], "lambda": [1.0, 1.0],
              "cost": [{"p": 1.0, "s": 0.0, "q": 0.0}, {"p": 1.0, "s": 0.0, "q": 0.0}]},
    "solver": {"radii": [8.0], "h": 2.0**-7, "tol": 1e-10, "max_iters": 5000,
               "direction": FROM_SUB},
    "simulate": {"dt": 1e-3, "horizon": 20.0, "paths": 10000, "seed": 0, "x0": None,
                 "regime0": 1, "discount_mode": sim.AS_WRITTEN, "noise": "generator",
                 "workers": 1, "policies": ["optimal", "zero", "scaled:0.5", "scaled:1.5"],
                 "checkpoints": [0.0, 0.5, 1.0, 2.0], "moment_times": [1.0, 2.0, 5.0, 10.0],
                 "transversality_times": [1.0, 2.0, 5.0, 10.0, 15.0]},
    "output": {"directory": "out", "formats": ["json", "csv"]},
}


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------------

def resolve_config(raw: dict, seed=None, out=None, workers=None) -> dict:
    """Validate ``raw`` against the schema and fill in defaults."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in raw.items():
        cfg[section].update(copy.deepcopy(values))
    s = cfg["simulate"]
    if s["x0"] is None:
        s["x0"] = [0.0] * int(cfg["model"]["dim"])
    if seed is not None:
        s["seed"] = int(seed)
    if out is not None:
        cfg["output"]["directory"] = str(out)
    if workers is not None:
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        s["workers"] = int(workers)
    if len(s["x0"]) != cfg["model"]["dim"]:
        raise ConfigError("simulate.x0 must have model.dim components")
    params_from_config(cfg)
    return cfg


def params_from_config(cfg) -> ModelParams:
    m = cfg["model"]
    costs = tuple(CostCoeffs(**{**{"p": 1.0, "s": 0.0, "q": 0.0}, **c}) for c in m["cost"])
    k1, k2 = (float(x) for x in m["k"])
    a1, a2 = (float(x) for x in m["a"])
    probe = ModelParams(dim=int(m["dim"]), k1=k1, k2=k2, a1=a1, a2=a2, cost=costs)
    validate_params(probe)
    if m["lambda"] == "special":
        lam = special_lambda(probe.dim, k1, k2, a1, a2)
    else:
        lam = tuple(float(x) for x in m["lambda"])
    params = ModelParams(dim=probe.dim, k1=k1, k2=k2, a1=a1, a2=a2,
                         lambda1=lam[0], lambda2=lam[1], cost=costs)
    return validate_params(params)


def growth_from_config(cfg, params) -> GrowthBound:
    g = cfg["model"].get("growth")
    if g is None:
        return params.growth()
    if any(not (x >= 0) for x in g):
        raise ParamError("growth entries must be >= 0")
    return GrowthBound(float(g[0]), float(g[1]))


def sim_config(cfg) -> sim.SimConfig:
    s = cfg["simulate"]
    return sim.SimConfig(dt=float(s["dt"]), horizon=float(s["horizon"]), n_paths=int(s["paths"]),
                         master_seed=int(s["seed"]), x0=tuple(float(x) for x in s["x0"]),
                         regime0=int(s["regime0"]), discount_mode=s["discount_mode"],
                         noise=s["noise"], workers=int(s["workers"]))


# -- output helpers -------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


class Output:
    def __init__(self, cfg, quiet=False):
        self.dir = Path(cfg["output"]["directory"])
        self.formats = set(cfg["output"]["formats"])
        self.quiet = quiet

    def write(self, name, text, fmt):
        if fmt in self.formats:
            self.dir.mkdir(parents=True, exist_ok=True)
            (self.dir / name).write_text(text)

    def show(self, text):
        if not self.quiet:
            sys.stdout.write(text)


# -- commands -------------------------------------------------------------------------

def cmd_validate(cfg, out: Output):
    out.show(dumps({"config": cfg, "valid": True, "version": __version__}))
    return EXIT_OK


def coeffs_payload(cfg):
    params = params_from_config(cfg)
    M = growth_from_config(cfg, params)
    if M.M1 == 0 and M.M2 == 0:
        co = SubCoeffs(0.0, 0.0, 0.0, 0.0, degenerate=True)
    else:
        co = build_coeffs(params, M)
    return {"B1": co.B1, "B2": co.B2, "D1": co.D1, "D2": co.D2, "degenerate": co.degenerate,
            "M1": M.M1, "M2": M.M2,
            "residuals": {"B": b_residual(co.B, params, M).tolist(),
                          "D": d_residual(co.D, co.B, params, M).tolist()}}


def cmd_coeffs(cfg, out: Output):
    payload = coeffs_payload(cfg)
    text = dumps(payload)
    out.write("coeffs.json", text, "json")
    out.show(text)
    return EXIT_OK


def closed_form_payload(cfg, n_radii=1000):
    params = params_from_config(cfg)
    m = cfg["model"]
    cf = build_closed_form(params.dim, params.k1, params.k2, params.a1, params.a2)
    radii = np.linspace(0.0, 10.0, n_radii)
    payload = {"m1": cf.m1, "m2": cf.m2, "lambda1": cf.lambda1, "lambda2": cf.lambda2,
               "residual": verify_identity(cf, cf.params(), radii),
               "matches_model": closed_form_for(params) is not None}
    if m["lambda"] != "special" or params.cost != (QUADRATIC_COST, QUADRATIC_COST):
        payload["note"] = "closed form uses f = |x|^2 and its own discount rates"
    return cf, payload


def cmd_closed_form(cfg, out: Output):
    _, payload = closed_form_payload(cfg)
    text = dumps(payload)
    out.write("closed_form.json", text, "json")
    out.show(text)
    return EXIT_OK


def solve_fields(cfg, out: Output | None = None):
    """Solve on every configured radius.  Returns (steps, reports, failure)."""
    params = params_from_config(cfg)
    M = growth_from_config(cfg, params)
    sv = cfg["solver"]
    coeffs = build_coeffs(params, M) if (M.M1 or M.M2) else None
    if coeffs is None:
        raise ConfigError("degenerate coefficients (M = 0): the solution is identically 1")
    results, failure = [], None
    prev = None
    for R in sv["radii"]:
        grid = RadialGrid.from_spacing(float(R), float(sv["h"]))
        entry = {"R": float(R), "h": grid.h}
        try:
            fields, report = solve_ball(params, M, coeffs, grid, tol=float(sv["tol"]),
                                        max_iters=int(sv["max_iters"]),
                                        direction=sv["direction"])
        except (NoConvergence, BracketViolation) as exc:
            fields, report = exc.fields, exc.report
            failure = f"R={R:g}: {exc}"
        entry["report"] = report.as_dict()
        if prev is not None and fields is not None:
            m = int(np.floor(prev[0] / 2 / grid.h + 1e-9)) + 1
            entry["gap"] = float(max(np.max(np.abs(prev[1].u[:m] - fields.u[:m])),
                                     np.max(np.abs(prev[1].v[:m] - fields.v[:m]))))
        if out is not None and fields is not None:
            rows = zip(grid.r, fields.u, fields.v, *(
                _values_or_nan(fields, params, coeffs)))
            out.write(f"field_R{float(R):g}.csv",
                      csv_text(["r", "u", "v", "z1", "z2", "c1", "c2"], rows), "csv")
        results.append((entry, fields))
        if failure:
            break
        prev = (float(R), fields)
    return params, coeffs, results, failure


def _values_or_nan(fields, params, coeffs):
    try:
        vf = extract_values(fields, params, coeffs)
        return vf.z1, vf.z2, vf.c1, vf.c2
    except ValueError:
        nan = np.full(fields.u.shape, np.nan)
        return nan, nan, nan, nan


def cmd_solve(cfg, out: Output):
    _, _, results, failure = solve_fields(cfg, out)
    payload = {"config": report_config(cfg), "version": __version__, "balls": [e for e, _ in results],
               "converged": failure is None, "failure": failure}
    text = dumps(payload)
    out.write("solve_report.json", text, "json")
    out.show(text)
    if failure is not None:
        log.error("%s", failure)
        return EXIT_SOLVER
    return EXIT_OK


def value_source(cfg, params, numeric=False):
    """Closed form when it applies, else (or on request) the numeric field on
    the largest configured ball."""
    cf = closed_form_for(params)
    if cf is not None and not numeric:
        return cf
    _, coeffs, results, failure = solve_fields(cfg)
    if failure is not None:
        raise NoConvergence(failure)
    fields = results[-1][1]
    return extract_values(fields, params, coeffs)


def build_policies(cfg, params):
    """Policies named in the config, plus the default value source.

    ``optimal`` and ``scaled:g`` use the closed form when it applies and the
    numeric field otherwise.
    """
    names = cfg["simulate"]["policies"]
    default = value_source(cfg, params)
    numeric = None if isinstance(default, ClosedForm) else default
    policies = []
    for n in names:
        if n == "zero":
            pol = sim.PolicySpec.zero()
        elif n == "optimal_numeric":
            numeric = numeric or value_source(cfg, params, numeric=True)
            pol = sim.PolicySpec.optimal(numeric)
        elif n == "optimal_closed_form":
            if not isinstance(default, ClosedForm):
                raise ConfigError("optimal_closed_form needs f = |x|^2 and special discount rates")
            pol = sim.PolicySpec.optimal(default)
        elif n.startswith("scaled:"):
            pol = sim.PolicySpec.scaled(default, float(n.split(":", 1)[1]))
        else:
            pol = sim.PolicySpec.optimal(default)
        policies.append(sim.PolicySpec(pol.kind, pol.factor, pol.source, label=n))
    return default, policies


def cmd_simulate(cfg, out: Output):
    params = params_from_config(cfg)
    sc = sim_config(cfg)
    _, policies = build_policies(cfg, params)
    # one batch per value source; per-path seeding keeps the noise common
    est = {}
    groups = {}
    for p in policies:
        groups.setdefault(id(p.source) if p.source is not None else None, []).append(p)
    zero_only = groups.pop(None, [])
    batches = list(groups.values()) or [[]]
    batches[0] = batches[0] + zero_only
    for group in batches:
        est.update(sim.cost_estimates(sim.run_batch(group, params, sc)))
    x0n = float(np.linalg.norm(sc.x0))
    rows = [(p.name, sc.regime0, x0n, est[p.name].mean, est[p.name].std_err, sc.n_paths,
             sc.discount_mode) for p in policies]
    text = csv_text(["policy", "regime0", "x0_norm", "J_mean", "J_stderr", "paths",
                     "discount_mode"], rows)
    out.write("estimates.csv", text, "csv")
    out.show(text)
    return EXIT_OK


def verify_payload(cfg):
    """Run the full check battery; returns the report dict."""
    params = params_from_config(cfg)
    M = growth_from_config(cfg, params)
    s = cfg["simulate"]
    sc = sim_config(cfg)
    checks = {}

    cf = closed_form_for(params)
    if cf is not None:
        res = verify_identity(cf, params, np.linspace(0.0, 10.0, 1000))
        checks["closed_form_identity"] = {"residual": res, "passed": res <= 1e-10}

    coeffs = build_coeffs(params, M)
    radii = np.linspace(0.0, 50.0, 501)
    ineq = check_inequalities(coeffs, params, M, radii)
    b_res = float(np.max(np.abs(b_residual(coeffs.B, params, M))))
    d_res = float(np.max(np.abs(d_residual(coeffs.D, coeffs.B, params, M))))
    checks["sub_super"] = {"B": list(coeffs.B), "D": list(coeffs.D), "B_residual": b_res,
                           "D_residual": d_res, "worst_margin": ineq.worst_margin,
                           "passed": bool(ineq.passed and b_res <= 1e-10 and d_res <= 1e-10)}

    source, others = build_policies(cfg, params)
    optimal = sim.PolicySpec(sim.PolicySpec.optimal(source).kind, 1.0, source, label="optimal")
    policies = [optimal] + [p for p in others if not (p.kind.startswith("optimal"))]
    times = sorted(set(s["checkpoints"]) | set(s["moment_times"]) | set(s["transversality_times"]))
    if times and max(times) > sc.horizon:
        raise ConfigError("check times must not exceed simulate.horizon")
    try:
        batch = sim.run_batch(policies, params, sc, times)
        sim._require_stable(batch)
    except PolicyBlowUp as exc:
        checks["simulation"] = {"passed": False, "reason": str(exc)}
        return _finish(cfg, checks)

    est = sim.cost_estimates(batch)
    z = sim.value_function(source)
    x0n = float(np.linalg.norm(sc.x0))
    opt = est["optimal"]
    value = float(z(x0n, sc.regime0))
    gaps = {}
    for i, p in enumerate(policies[1:], start=1):
        d = sim.paired_difference(batch, i, 0)
        gaps[p.name] = {"J": est[p.name].mean, "J_stderr": est[p.name].std_err,
                        "gap": d.mean, "gap_stderr": d.std_err,
                        "suboptimal": bool(d.mean > 3 * d.std_err),
                        "passed": bool(d.mean >= -3 * d.std_err)}
    checks["cost"] = {"J_optimal": opt.mean, "J_optimal_stderr": opt.std_err, "value": value,
                      "tail": opt.tail, "matches_value": bool(opt.within(value)),
                      "policies": gaps,
                      "passed": bool(opt.within(value) and all(g["passed"] for g in gaps.values()))}

    sub = batch.at(sorted(set(s["checkpoints"])))
    mart = {}
    for i, p in enumerate(policies):
        rep = sim.martingale_from_batch(sub, i, source)
        ok = rep.flat if i == 0 else rep.super_ok
        mart[p.name] = {"times": rep.times, "means": rep.means, "std_errs": rep.std_errs,
                        "target": rep.target, "flat": rep.flat, "supermartingale": rep.super_ok,
                        "passed": ok}
    checks["martingale"] = {"policies": mart, "passed": all(m["passed"] for m in mart.values())}

    mb = batch.at(sorted(set(s["moment_times"])))
    means, ses = sim.moments_from_batch(mb, 0)
    mrep = sim.moment_report(mb.times, means, ses)
    checks["moment_bound"] = {"times": mrep.times, "second_moments": mrep.second_moments,
                              "C1": mrep.C1, "C2": mrep.C2, "passed": mrep.passed}

    tb = batch.at(sorted(set(s["transversality_times"])))
    vals, ses = sim.discounted_moments(tb, 0)
    trep = sim.transversality_report(tb.times, vals, ses)
    checks["transversality"] = {"times": trep.times, "values": trep.values,
                                "passed": trep.passed, "reason": trep.reason}

    if not isinstance(source, ClosedForm):
        conv = convexity_probe(source)
        checks["convexity"] = {"min_second_derivative": conv.min_second_derivative,
                               "min_slope": conv.min_slope, "passed": conv.passed}
    return _finish(cfg, checks)


def report_config(cfg):
    """Resolved config as embedded in reports: execution-only settings
    (worker count, output location) are left out so they cannot change the
    report bytes."""
    cfg = copy.deepcopy(cfg)
    cfg["simulate"].pop("workers", None)
    cfg.pop("output", None)
    return cfg


def _finish(cfg, checks):
    failures = sorted(k for k, v in checks.items() if not v["passed"])
    return {"config": report_config(cfg), "version": __version__, "checks": checks,
            "failures": failures, "passed": not failures}


def cmd_verify(cfg, out: Output):
    payload = verify_payload(cfg)
    text = dumps(payload)
    out.write("verify_report.json", text, "json")
    out.show(text)
    return EXIT_OK if payload["passed"] else EXIT_VERIFY


COMMANDS = {"validate": cmd_validate, "coeffs": cmd_coeffs, "closed-form": cmd_closed_form,
            "solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="regime-hjb", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="master seed (overrides simulate.seed)")
        p.add_argument("--workers", type=int, help="simulation threads (overrides simulate.workers)")
        p.add_argument("--quiet", action="store_true", help="no stdout report")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = json.loads(Path(args.config).read_text())
        cfg = resolve_config(raw, seed=args.seed, out=args.out, workers=args.workers)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = Output(cfg, quiet=args.quiet)
    try:
        return COMMANDS[args.command](cfg, out)
    except (NoConvergence, BracketViolation, PositiveRoot, SingularMatrix) as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except PolicyBlowUp as exc:
        log.error("%s", exc)
        return EXIT_VERIFY
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""JSON configuration: validation, object construction and batch execution."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .certify import (BracketError, Grid, bisect, check_ccm, check_ccm_performance,
                      check_performance_lmi, check_stability_lmi)
from .exprlang import ExprArray, ExprError, parse
from .geometry import Metric
from .lpv import EquilibriumFamily, GainScheduledController, OutOfDomainError, get_family, lpv_closed_loop
from .model import SystemModel, get_model
from .realization import CCMController, GeodesicSettings
from .sim import (ExpressionTarget, FamilyTarget, LawAdapter, ReferenceSignal, TargetError, simulate,
                  steady_error, summary, write_csv, write_summary)

EXIT_OK = 0
EXIT_PREDICATE = 1
EXIT_SCHEMA = 2
EXIT_EXPRESSION = 3
EXIT_RUNTIME = 4

_expr = {"type": ["string", "number"]}
_vector = {"type": "array", "items": _expr}
_matrix = {"type": "array", "items": {"type": "array", "items": _expr}, "minItems": 1}
_names = {"type": "array", "items": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"}}
_num_vec = {"type": "array", "items": {"type": "number"}}
_axis = {"oneOf": [{"type": "number"},
                   {"type": "array", "prefixItems": [{"type": "number"}, {"type": "number"},
                                                     {"type": "integer", "minimum": 1}],
                    "minItems": 3, "maxItems": 3}]}

SCHEMA = {
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {"oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["states", "f"], "additionalProperties": False,
             "properties": {"name": {"type": "string"}, "states": _names, "inputs": _names,
                            "disturbances": _names, "f": _vector, "h": _vector}}]},
        "family": {"oneOf": [
            {"type": "string"},
            {"type": "object", "additionalProperties": False,
             "required": ["params", "x_e", "u_e", "w_e", "g", "g_variables", "bounds"],
             "properties": {"name": {"type": "string"}, "params": _names, "x_e": _vector,
                            "u_e": _vector, "w_e": _vector, "z_e": _vector, "g": _vector,
                            "g_variables": _names, "bounds": {"type": "array"},
                            "rate_bounds": _num_vec}}]},
        "controllers": {"type": "array", "items": {
            "type": "object", "required": ["name", "type"], "additionalProperties": False,
            "properties": {"name": {"type": "string"},
                           "type": {"enum": ["gsc1", "gsc2", "ccm", "custom"]},
                           "K": _matrix, "metric": _matrix, "law": _vector,
                           "nodes": {"type": "integer", "minimum": 2},
                           "substeps": {"type": "integer", "minimum": 1},
                           "tol": {"type": "number", "exclusiveMinimum": 0},
                           "max_iter": {"type": "integer", "minimum": 1}}}},
        "scenarios": {"type": "array", "items": {
            "type": "object", "required": ["name", "x0", "t_end"], "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "reference": {"type": "object", "required": ["kind"],
                              "properties": {"kind": {"enum": list(ReferenceSignal.KINDS)}}},
                "target": {"type": "object", "required": ["x"], "additionalProperties": False,
                           "properties": {"x": _vector, "w": _vector, "u": _vector}},
                "perturbation": {"type": "object", "required": ["kind"]},
                "controllers": {"type": "array", "items": {"type": "string"}},
                "x0": _num_vec,
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "fit_window": {"type": "array", "items": {"type": "number"},
                               "minItems": 2, "maxItems": 2},
                "steady_after": {"type": "number"},
                "steady_component": {"type": "integer", "minimum": 0},
                "expect": {"type": "object", "additionalProperties": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"diverged": {"type": "boolean"},
                                   "lambda_fit_min": {"type": "number"},
                                   "lambda_fit_max": {"type": "number"},
                                   "steady_error_min": {"type": "number"},
                                   "steady_error_max": {"type": "number"}}}}}}},
        "certifications": {"type": "array", "items": {
            "type": "object", "required": ["name", "condition", "grid"], "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "condition": {"enum": ["stability", "performance", "ccm", "ccm_performance"]},
                "controller": {"type": "string"},
                "metric": _matrix,
                "K": _matrix,
                "Acl": _matrix,
                "params": _names,
                "grid": {"type": "object", "additionalProperties": _axis},
                "rate_bounds": _num_vec,
                "value": {"type": "number"},
                "bracket": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "expect": {"type": "object", "additionalProperties": False,
                           "properties": {"verdict": {"type": "string"}, "min": {"type": "number"},
                                          "max": {"type": "number"}}}},
            "oneOf": [{"required": ["value"]}, {"required": ["bracket"]}]}},
        "output": {"type": "string"},
    },
}


_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


class ConfigError(Exception):
    exit_code = EXIT_RUNTIME


class ConfigSchemaError(ConfigError):
    exit_code = EXIT_SCHEMA


class ConfigExpressionError(ConfigError):
    exit_code = EXIT_EXPRESSION


class ConfigRuntimeError(ConfigError):
    exit_code = EXIT_RUNTIME


def validate(cfg: dict) -> None:
    try:
        _VALIDATOR.validate(cfg)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigSchemaError(f"{where}: {exc.message}") from None


def load(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError(f"{path}: invalid JSON ({exc})") from None
    validate(cfg)
    return cfg


def _check_exprs(path: str, exprs, variables) -> None:
    """Parse every entry, reporting the JSON path of the first bad one."""
    def walk(p, e):
        if isinstance(e, list):
            for i, item in enumerate(e):
                walk(f"{p}[{i}]", item)
        else:
            try:
                parse(str(e), variables)
            except ExprError as exc:
                raise ConfigExpressionError(f"{p}: {exc}") from None
    walk(path, exprs)


def _dims(path: str, got, want) -> None:
    if got != want:
        raise ConfigExpressionError(f"{path}: shape {got} does not match expected {want}")


def build_model(spec) -> SystemModel:
    if isinstance(spec, str):
        try:
            return get_model(spec)
        except KeyError as exc:
            raise ConfigSchemaError(f"model: {exc.args[0]}") from None
    states = spec["states"]
    inputs = spec.get("inputs", [])
    dist = spec.get("disturbances", [])
    variables = list(states) + list(inputs) + list(dist)
    _check_exprs("model.f", spec["f"], variables)
    _dims("model.f", len(spec["f"]), len(states))
    if "h" in spec:
        _check_exprs("model.h", spec["h"], variables)
    return SystemModel(states, inputs, dist, spec["f"], spec.get("h"), name=spec.get("name", "model"))


def build_family(spec, model: SystemModel) -> EquilibriumFamily | None:
    if spec is None:
        return None
    if isinstance(spec, str):
        try:
            fam = get_family(spec)
        except KeyError as exc:
            raise ConfigSchemaError(f"family: {exc.args[0]}") from None
    else:
        params = spec["params"]
        for key in ("x_e", "u_e", "w_e", "z_e"):
            if key in spec:
                _check_exprs(f"family.{key}", spec[key], params)
        _check_exprs("family.g", spec["g"], spec["g_variables"])
        try:
            fam = EquilibriumFamily(params, spec["x_e"], spec["u_e"], spec["w_e"], spec["g"],
                                    spec["g_variables"], spec["bounds"], spec.get("rate_bounds"),
                                    spec.get("z_e"), name=spec.get("name", "family"))
        except ExprError as exc:
            raise ConfigExpressionError(f"family: {exc}") from None
        except ValueError as exc:
            raise ConfigSchemaError(f"family: {exc}") from None
    _dims("family.x_e", fam.x_e.shape[0], model.n_x)
    _dims("family.u_e", fam.u_e.shape[0], model.n_u)
    _dims("family.w_e", fam.w_e.shape[0], model.n_w)
    return fam


def build_controller(spec: dict, model: SystemModel, fam: EquilibriumFamily | None, where: str):
    kind = spec["type"]
    name = spec["name"]
    if kind in ("gsc1", "gsc2"):
        if fam is None:
            raise ConfigSchemaError(f"{where}: gain-scheduled controllers need a family")
        if "K" not in spec:
            raise ConfigSchemaError(f"{where}: missing K")
        _check_exprs(f"{where}.K", spec["K"], fam.params)
        _dims(f"{where}.K", (len(spec["K"]), len(spec["K"][0])), (model.n_u, model.n_x))
        mode = "reference" if kind == "gsc1" else "state"
        return GainScheduledController(fam, spec["K"], mode=mode, name=name)
    if kind == "ccm":
        for key in ("K", "metric"):
            if key not in spec:
                raise ConfigSchemaError(f"{where}: missing {key}")
        _check_exprs(f"{where}.K", spec["K"], model.states + model.inputs)
        _check_exprs(f"{where}.metric", spec["metric"], model.states)
        _dims(f"{where}.K", (len(spec["K"]), len(spec["K"][0])), (model.n_u, model.n_x))
        _dims(f"{where}.metric", (len(spec["metric"]), len(spec["metric"][0])), (model.n_x, model.n_x))
        settings = GeodesicSettings(spec.get("nodes", 50), spec.get("tol", 1e-8), spec.get("max_iter", 500))
        return CCMController(model, spec["K"], Metric(spec["metric"], model.states), settings,
                             spec.get("substeps", 4), name=name)
    if "law" not in spec:
        raise ConfigSchemaError(f"{where}: missing law")
    _check_exprs(f"{where}.law", spec["law"], model.states + model.disturbances + ("t",))
    _dims(f"{where}.law", len(spec["law"]), model.n_u)
    return LawAdapter(model, spec["law"], name=name)


def build_target(spec: dict, model: SystemModel, fam: EquilibriumFamily | None, where: str):
    if "target" in spec:
        tgt = spec["target"]
        for key in ("x", "w", "u"):
            if key in tgt:
                _check_exprs(f"{where}.target.{key}", tgt[key], ["t"])
        _dims(f"{where}.target.x", len(tgt["x"]), model.n_x)
        return ExpressionTarget(model, tgt["x"], tgt.get("w", []), tgt.get("u"))
    if "reference" not in spec:
        raise ConfigSchemaError(f"{where}: needs a reference or a target")
    if fam is None:
        raise ConfigSchemaError(f"{where}: a reference signal needs a family")
    try:
        ref = ReferenceSignal.from_dict(spec["reference"])
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigSchemaError(f"{where}.reference: {exc}") from None
    return FamilyTarget(model, fam, ref)


@dataclass
class Built:
    model: SystemModel
    family: EquilibriumFamily | None
    controllers: dict
    cfg: dict


def build(cfg: dict) -> Built:
    validate(cfg)
    try:
        model = build_model(cfg["model"])
        fam = build_family(cfg.get("family"), model)
        ctrls = {}
        for i, spec in enumerate(cfg.get("controllers", [])):
            ctrls[spec["name"]] = build_controller(spec, model, fam, f"controllers[{i}]")
    except ExprError as exc:
        raise ConfigExpressionError(str(exc)) from None
    for i, sc in enumerate(cfg.get("scenarios", [])):
        _dims(f"scenarios[{i}].x0", len(sc["x0"]), model.n_x)
        for c in sc.get("controllers", []):
            if c not in ctrls:
                raise ConfigSchemaError(f"scenarios[{i}]: unknown controller {c!r}")
    return Built(model, fam, ctrls, cfg)


# ---------------------------------------------------------------------------
# Execution

@dataclass
class RunReport:
    exit_code: int = EXIT_OK
    failures: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    def fail(self, code: int, message: str) -> None:
        self.failures.append(message)
        # runtime faults (4) outrank predicate failures (1)
        self.exit_code = max(self.exit_code, code)


def _check_expect(name: str, summ: dict, exp: dict, report: RunReport) -> None:
    if "diverged" in exp and summ["diverged"] != exp["diverged"]:
        report.fail(EXIT_PREDICATE, f"{name}: diverged={summ['diverged']}, expected {exp['diverged']}")
    lam = summ.get("lambda_fit")
    if "lambda_fit_min" in exp and (lam is None or lam < exp["lambda_fit_min"]):
        report.fail(EXIT_PREDICATE, f"{name}: lambda_fit={lam} below {exp['lambda_fit_min']}")
    if "lambda_fit_max" in exp and (lam is None or lam > exp["lambda_fit_max"]):
        report.fail(EXIT_PREDICATE, f"{name}: lambda_fit={lam} above {exp['lambda_fit_max']}")
    se = summ.get("steady_error")
    if "steady_error_min" in exp and (se is None or se < exp["steady_error_min"]):
        report.fail(EXIT_PREDICATE, f"{name}: steady_error={se} below {exp['steady_error_min']}")
    if "steady_error_max" in exp and (se is None or se > exp["steady_error_max"]):
        report.fail(EXIT_PREDICATE, f"{name}: steady_error={se} above {exp['steady_error_max']}")


def run_scenarios(built: Built, out: Path, report: RunReport, only=None) -> None:
    model, fam = built.model, built.family
    for i, sc in enumerate(built.cfg.get("scenarios", [])):
        where = f"scenarios[{i}]"
        target = build_target(sc, model, fam, where)
        pert = None
        if "perturbation" in sc:
            sig = ReferenceSignal.from_dict(sc["perturbation"])
            pert = sig.value
        names = sc.get("controllers") or list(built.controllers)
        expect = sc.get("expect", {})
        for cname in names:
            if only is not None and (sc["name"], cname) not in only:
                continue
            run_name = f"{sc['name']}_{cname}"
            try:
                res = simulate(model, built.controllers[cname], target, sc["x0"], t_end=sc["t_end"],
                               dt=sc.get("dt", 1e-3), perturbation=pert, scenario=sc["name"])
            except (TargetError, OutOfDomainError) as exc:
                report.fail(EXIT_RUNTIME, f"{run_name}: {exc}")
                continue
            window = tuple(sc["fit_window"]) if "fit_window" in sc else None
            extra = {}
            if "steady_after" in sc and not res.truncated and res.t[-1] >= sc["steady_after"]:
                extra["steady_error"] = steady_error(res, sc["steady_after"], sc.get("steady_component"))
                extra["steady_after"] = sc["steady_after"]
            summ = summary(res, window, **extra)
            csv_path = out / f"{run_name}.csv"
            json_path = out / f"{run_name}.json"
            write_csv(res, csv_path)
            write_summary(summ, json_path)
            report.files += [str(csv_path), str(json_path)]
            report.results[run_name] = res
            report.summaries[run_name] = summ
            exp = expect.get(cname, {})
            if res.truncated and not exp.get("diverged", False):
                report.fail(EXIT_RUNTIME, f"{run_name}: run truncated "
                            f"({'diverged' if res.diverged else res.domain_error})")
                continue
            _check_expect(run_name, summ, exp, report)


def _certification(spec: dict, built: Built, where: str):
    """Return ``check(value) -> CertReport`` and whether larger values are harder."""
    model, fam = built.model, built.family
    cond = spec["condition"]
    grid = Grid({k: (tuple(v) if isinstance(v, list) else v) for k, v in spec["grid"].items()})
    ctrl = built.controllers.get(spec["controller"]) if "controller" in spec else None
    if "controller" in spec and ctrl is None:
        raise ConfigSchemaError(f"{where}: unknown controller {spec['controller']!r}")
    if cond in ("stability", "performance"):
        params = spec.get("params") or (list(fam.params) if fam else [])
        metric = spec.get("metric")
        if metric is None:
            raise ConfigSchemaError(f"{where}: missing metric")
        _check_exprs(f"{where}.metric", metric, params)
        M = [[str(v) for v in row] for row in metric]
        if cond == "stability":
            if "Acl" in spec:
                _check_exprs(f"{where}.Acl", spec["Acl"], params)
                Acl = ExprArray(spec["Acl"], params)
            elif isinstance(ctrl, GainScheduledController):
                cl = lpv_closed_loop(model, fam, ctrl.K)
                Acl = lambda p: cl(p)[0]  # noqa: E731
            else:
                raise ConfigSchemaError(f"{where}: stability needs Acl or a gain-scheduled controller")
            rb = spec.get("rate_bounds")
            return (lambda v: check_stability_lmi(M, Acl, v, grid, rb, params)), True
        if not isinstance(ctrl, GainScheduledController):
            raise ConfigSchemaError(f"{where}: performance needs a gain-scheduled controller")
        cl = lpv_closed_loop(model, fam, ctrl.K)
        rb = spec.get("rate_bounds")
        return (lambda v: check_performance_lmi(M, cl, v, grid, rb, params)), False
    # contraction conditions act on (x, u, w)
    if isinstance(ctrl, CCMController):
        M, K = ctrl.metric.M, ctrl.K
    else:
        for key in ("metric", "K"):
            if key not in spec:
                raise ConfigSchemaError(f"{where}: missing {key}")
        _check_exprs(f"{where}.metric", spec["metric"], model.states)
        _check_exprs(f"{where}.K", spec["K"], model.states + model.inputs)
        M, K = spec["metric"], ExprArray(spec["K"], model.states + model.inputs)
    if cond == "ccm":
        return (lambda v: check_ccm(M, model, K, v, grid)), True
    return (lambda v: check_ccm_performance(M, model, K, v, grid)), False


def run_certifications(built: Built, out: Path | None, report: RunReport) -> None:
    for i, spec in enumerate(built.cfg.get("certifications", [])):
        where = f"certifications[{i}]"
        check, maximize = _certification(spec, built, where)
        exp = spec.get("expect", {})
        try:
            if "bracket" in spec:
                value, rep = bisect(check, tuple(spec["bracket"]), tol=spec.get("tol", 1e-3),
                                    maximize=maximize)
            else:
                value = spec["value"]
                rep = check(value)
        except BracketError as exc:
            entry = {"error": str(exc), "reports": [r.to_dict() for r in exc.reports]}
            report.certificates[spec["name"]] = entry
            report.fail(EXIT_RUNTIME, f"{spec['name']}: {exc}")
            continue
        except (ValueError, OutOfDomainError) as exc:
            report.certificates[spec["name"]] = {"error": str(exc)}
            report.fail(EXIT_RUNTIME, f"{spec['name']}: {exc}")
            continue
        entry = {"value": value, **rep.to_dict()}
        report.certificates[spec["name"]] = entry
        if "verdict" in exp and rep.verdict != exp["verdict"]:
            report.fail(EXIT_PREDICATE, f"{spec['name']}: verdict {rep.verdict}, expected {exp['verdict']}")
        if "bracket" in spec:
            if "min" in exp and value < exp["min"]:
                report.fail(EXIT_PREDICATE, f"{spec['name']}: {value} below {exp['min']}")
            if "max" in exp and value > exp["max"]:
                report.fail(EXIT_PREDICATE, f"{spec['name']}: {value} above {exp['max']}")
    if out is not None and built.cfg.get("certifications"):
        path = out / "certificates.json"
        write_summary(report.certificates, path)
        report.files.append(str(path))


def run(cfg: dict, out_dir=None, scenarios: bool = True, certifications: bool = True,
        only=None) -> RunReport:
    """Execute a configuration; never raises for configuration problems.

    ``only`` optionally restricts simulations to ``(scenario, controller)`` pairs.
    """
    report = RunReport()
    try:
        built = build(cfg)
        out = Path(out_dir or cfg.get("output") or "out")
        os.makedirs(out, exist_ok=True)
        if certifications:
            run_certifications(built, out, report)
        if scenarios:
            run_scenarios(built, out, report, only)
    except ConfigError as exc:
        report.fail(exc.exit_code, str(exc))
        return report
    except ExprError as exc:
        report.fail(EXIT_EXPRESSION, str(exc))
        return report
    summary_doc = {
        "exit_code": report.exit_code,
        "failures": report.failures,
        "runs": report.summaries,
        "certificates": report.certificates,
    }
    path = out / "summary.json"
    write_summary(summary_doc, path)
    report.files.append(str(path))
    return report


def run_file(path, out_dir=None, **kw) -> RunReport:
    try:
        cfg = load(path)
    except ConfigError as exc:
        report = RunReport()
        report.fail(exc.exit_code, str(exc))
        return report
    except OSError as exc:
        report = RunReport()
        report.fail(EXIT_RUNTIME, f"{path}: {exc}")
        return report
    return run(cfg, out_dir, **kw)


def jacobian_check(cfg: dict, count: int = 5, seed: int = 0) -> dict:
    """Finite-difference agreement of the model Jacobians at family equilibria
    and at seeded random points near them."""
    built = build(cfg)
    model, fam = built.model, built.family
    rng = np.random.default_rng(seed)
    points = []
    if fam is not None:
        for s in fam.grid(count):
            x, u, w = fam.equilibrium(s)
            points.append((x, u, w))
    else:
        points.append((np.zeros(model.n_x), np.zeros(model.n_u), np.zeros(model.n_w)))
    jittered = [(x + rng.uniform(-0.5, 0.5, x.shape), u + rng.uniform(-0.5, 0.5, u.shape),
                 w + rng.uniform(-0.5, 0.5, w.shape)) for x, u, w in points]
    worst = 0.0
    for x, u, w in points + jittered:
        worst = max(worst, model.fd_check(x, u, w))
    return {"model": model.name, "points": len(points) + len(jittered), "max_rel_error": worst}

"""Experiment configs, the check registry and deterministic JSON/CSV reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable

import jsonschema
import numpy as np

from . import __version__
from .densities import (
    DEFAULT_LAMBDAS,
    DensityModel,
    ExpMixture,
    LogConcave,
    RawChaos,
    Unit,
    certify_strong_positivity,
    default_grid,
    grid_refute_strong_positivity,
    log_concavity_grid_test,
    wick_square_psd_test,
)
from .hermite import ChaosExpansion, as_multi_index, from_monomials, make_rng, random_expansion
from .inequalities import (
    COEF_TOL,
    PATH_TOL,
    PSD_TOL,
    QUAD_TOL,
    InequalityReport,
    PSDCheck,
    b_matrix,
    exponential_family_gram,
    refined_a_matrix,
    schur_product_psd,
    verify_brascamp_lieb,
    verify_classical_poincare,
    verify_hk,
    verify_main_theorem,
    verify_refined_theorem,
    verify_remark5,
)

THREADS_ENV = "WICK_CHAOS_THREADS"
STATUSES = ("holds", "violated", "equality", "inconclusive")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


def _schema(name: str) -> dict:
    return json.loads(resources.files("wick_chaos.schemas").joinpath(name).read_text())


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

@dataclass
class Experiment:
    seed: int | None
    dims: int
    degree_cap: int
    densities: list[tuple[str, DensityModel]]
    functions: list[tuple[str, ChaosExpansion]]
    checks: list[dict]
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _parse_keyed(coeffs: dict, dim: int, where: str) -> dict:
    out = {}
    for key, val in coeffs.items():
        try:
            alpha = as_multi_index(int(p) for p in str(key).split(","))
        except ValueError as exc:
            raise ConfigError(f"{where}: bad multi-index key {key!r}") from exc
        if len(alpha) != dim:
            raise ConfigError(f"{where}: multi-index {key!r} does not have length {dim}")
        out[alpha] = float(val)
    return out


def _density(spec: dict, i: int, dims: int) -> tuple[str, DensityModel]:
    where = f"densities[{i}]"
    kind = spec["type"]
    ident = spec.get("id", f"{kind}-{i}")
    try:
        if kind == "unit":
            return ident, Unit(dims)
        if kind == "exp_mixture":
            if "weights" not in spec or "shifts" not in spec:
                raise ConfigError(f"{where}: exp_mixture needs 'weights' and 'shifts'")
            model = ExpMixture(spec["weights"], spec["shifts"])
        elif kind == "log_concave_quadratic":
            if "precision" not in spec:
                raise ConfigError(f"{where}.precision: required for log_concave_quadratic")
            model = LogConcave.quadratic(spec["precision"], spec.get("mean"), spec.get("quartic", 0.0))
        else:
            if "coeffs" not in spec:
                raise ConfigError(f"{where}.coeffs: required for raw_chaos")
            chaos = ChaosExpansion(dims, _parse_keyed(spec["coeffs"], dims, f"{where}.coeffs"))
            model = RawChaos(chaos, spec.get("strongly_positive"))
    except ConfigError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    if model.dim != dims:
        raise ConfigError(f"{where}: dimension {model.dim} does not match dims={dims}")
    return ident, model


def _functions(specs: list, dims: int, seed: int | None) -> list[tuple[str, ChaosExpansion]]:
    rng = make_rng(seed) if seed is not None else None
    out = []
    for i, spec in enumerate(specs):
        where = f"functions[{i}]"
        kind = spec["type"]
        if kind == "hermite":
            if "index" not in spec:
                raise ConfigError(f"{where}.index: required for hermite functions")
            alpha = tuple(spec["index"])
            if len(alpha) != dims:
                raise ConfigError(f"{where}.index: length {len(alpha)} does not match dims={dims}")
            name = "He" + "".join(map(str, alpha)) if dims == 1 else "He(" + ",".join(map(str, alpha)) + ")"
            out.append((spec.get("id", name), ChaosExpansion.hermite(alpha, spec.get("coef", 1.0))))
        elif kind in ("polynomial", "chaos"):
            if "coeffs" not in spec:
                raise ConfigError(f"{where}.coeffs: required for {kind} functions")
            coeffs = _parse_keyed(spec["coeffs"], dims, f"{where}.coeffs")
            F = from_monomials(coeffs, dims) if kind == "polynomial" else ChaosExpansion(dims, coeffs)
            out.append((spec.get("id", f"{kind}-{i}"), F))
        else:
            if rng is None:
                raise ConfigError(f"{where}: 'seed' is required when random functions are requested")
            if "degree" not in spec:
                raise ConfigError(f"{where}.degree: required for random functions")
            base = spec.get("id", f"random-{i}")
            for j in range(spec.get("count", 1)):
                out.append((f"{base}.{j}", random_expansion(dims, spec["degree"], rng)))
    return out


def parse_config(cfg: dict) -> Experiment:
    try:
        jsonschema.validate(cfg, _schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from exc
    dims = cfg["dims"]
    densities = [_density(spec, i, dims) for i, spec in enumerate(cfg["densities"])]
    functions = _functions(cfg["functions"], dims, cfg.get("seed"))
    ids = [d for d, _ in densities]
    if len(set(ids)) != len(ids):
        raise ConfigError("densities: duplicate ids")
    for i, chk in enumerate(cfg["checks"]):
        if chk["name"] not in REGISTRY:
            raise ConfigError(f"checks[{i}].name: unregistered check {chk['name']!r}")
        for ref in chk.get("densities", []):
            if ref not in ids:
                raise ConfigError(f"checks[{i}].densities: unknown density id {ref!r}")
        fids = {f for f, _ in functions}
        for ref in chk.get("functions", []):
            if ref not in fids:
                raise ConfigError(f"checks[{i}].functions: unknown function id {ref!r}")
    return Experiment(cfg.get("seed"), dims, cfg["degree_cap"], densities, functions,
                      cfg["checks"], cfg.get("tolerances", {}), cfg)


def load_config(path: str) -> Experiment:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(cfg)


# ---------------------------------------------------------------------------
# instance rows
# ---------------------------------------------------------------------------

def _status(verdict: str, claim: str) -> str:
    if verdict == "violated" and claim == "no-claim":
        return "inconclusive"
    return verdict


def _ineq_row(check: str, rep: InequalityReport, density: str | None, function: str | None) -> dict:
    details = {k: v for k, v in rep.details.items()}
    details["provenance"] = rep.provenance
    return {
        "check": check, "kind": "inequality", "name": rep.name, "density": density,
        "function": function, "lhs": rep.lhs, "rhs": rep.rhs, "gap": rep.gap, "tol": rep.tol,
        "verdict": rep.verdict, "claim": rep.claim, "status": _status(rep.verdict, rep.claim),
        "details": details,
    }


def _psd_row(check: str, name: str, checks: list[PSDCheck], density=None, claim="theorem") -> dict:
    worst = min(checks, key=lambda c: c.min_eigenvalue - c.threshold)
    verdict = "holds" if all(c.is_psd for c in checks) else "violated"
    return {
        "check": check, "kind": "psd", "name": name, "density": density, "function": None,
        "lhs": None, "rhs": None, "gap": None, "tol": worst.tol, "verdict": verdict, "claim": claim,
        "status": _status(verdict, claim),
        "details": {"trials": len(checks), "worst_min_eigenvalue": worst.min_eigenvalue,
                    "worst_threshold": worst.threshold, "size": worst.size},
    }


def _error_row(check: str, name: str, density, function, exc: Exception) -> dict:
    return {
        "check": check, "kind": "error", "name": name, "density": density, "function": function,
        "lhs": None, "rhs": None, "gap": None, "tol": None, "verdict": "error", "claim": "no-claim",
        "status": "inconclusive", "details": {"error": f"{type(exc).__name__}: {exc}"},
    }


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

Task = Callable[[], list[dict]]


def _selected(exp: Experiment, chk: dict):
    dens = [(d, m) for d, m in exp.densities if not chk.get("densities") or d in chk["densities"]]
    funs = [(f, F) for f, F in exp.functions if not chk.get("functions") or f in chk["functions"]]
    return dens, funs


def _ks(chk: dict, default: int = 1) -> list[int]:
    k = chk.get("k", default)
    return list(k) if isinstance(k, list) else [k]


def _tol(exp: Experiment, key: str, default: float) -> float:
    return exp.tolerances.get(key, default)


def _guard(check, name, density, function, fn) -> Task:
    def task():
        try:
            return fn()
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return [_error_row(check, name, density, function, exc)]
    return task


def _check_classical(exp, chk):
    _, funs = _selected(exp, chk)
    tol = _tol(exp, "inequality", COEF_TOL)
    return [_guard("classical-poincare", "classical-poincare", None, f,
                   lambda F=F, f=f: [_ineq_row("classical-poincare", verify_classical_poincare(F, tol), None, f)])
            for f, F in funs]


def _check_hk(exp, chk):
    dens, funs = _selected(exp, chk)
    tol = _tol(exp, "inequality", COEF_TOL)
    targets = [(None, None)] if not chk.get("densities") else dens
    tasks = []
    for k in _ks(chk):
        for d, model in targets:
            for f, F in funs:
                def run(F=F, f=f, k=k, d=d, model=model):
                    lo, up = verify_hk(F, k, model, tol)
                    return [_ineq_row("hk", lo, d, f), _ineq_row("hk", up, d, f)]
                tasks.append(_guard("hk", f"hk-k{k}", d, f, run))
    return tasks


def _check_bl(exp, chk):
    dens, funs = _selected(exp, chk)
    tol = _tol(exp, "quadrature", QUAD_TOL)
    return [
        _guard("brascamp-lieb", "brascamp-lieb", d, f,
               lambda m=m, F=F, d=d, f=f: [_ineq_row("brascamp-lieb", verify_brascamp_lieb(m, F, tol), d, f)])
        for d, m in dens if isinstance(m, LogConcave) for f, F in funs
    ]


def _check_main(exp, chk):
    dens, funs = _selected(exp, chk)
    tol, ptol = _tol(exp, "inequality", COEF_TOL), _tol(exp, "paths", PATH_TOL)
    tasks = []
    for d, m in dens:
        for f, F in funs:
            def run(m=m, F=F, d=d, f=f):
                lo, up = verify_main_theorem(F, m, tol, path_tol=ptol)
                return [_ineq_row("main", lo, d, f), _ineq_row("main", up, d, f)]
            tasks.append(_guard("main", "main", d, f, run))
    return tasks


def _check_remark5(exp, chk):
    dens, funs = _selected(exp, chk)
    tol = _tol(exp, "inequality", COEF_TOL)
    return [_guard("remark5", "remark5", d, f,
                   lambda m=m, F=F, d=d, f=f: [_ineq_row("remark5", verify_remark5(F, m, tol), d, f)])
            for d, m in dens for f, F in funs]


def _check_refined(exp, chk):
    dens, funs = _selected(exp, chk)
    tol, ptol = _tol(exp, "inequality", COEF_TOL), _tol(exp, "paths", PATH_TOL)
    return [
        _guard("refined", f"refined-k{k}", d, f,
               lambda m=m, F=F, d=d, f=f, k=k: [
                   _ineq_row("refined", verify_refined_theorem(F, m, k, tol, path_tol=ptol), d, f)])
        for k in _ks(chk) for d, m in dens for f, F in funs
    ]


def _positivity_row(d: str, model: DensityModel, exp: Experiment, chk: dict) -> list[dict]:
    tol = _tol(exp, "positivity", 1e-8)
    cert = certify_strong_positivity(model)
    details: dict[str, Any] = {"methods": ["structural"]}
    if cert.verdict == "certified-strong":
        verdict = cert.verdict
        witnesses, eigs = [], []
    else:
        g = chk.get("grid", {})
        grid = default_grid(model.dim, exp.seed or 0, g.get("lower", -6.0), g.get("upper", 6.0),
                            g.get("step", 0.1), g.get("samples", 4096))
        nu = model.expansion(exp.degree_cap)
        grid_rep = grid_refute_strong_positivity(nu, chk.get("lambdas", DEFAULT_LAMBDAS), grid, tol)
        witnesses = list(grid_rep.witnesses)
        eigs = []
        details["methods"].append("grid")
        if "wick_square" in chk:
            ws = chk["wick_square"]
            psd_rep = wick_square_psd_test(model, trials=ws.get("trials", 100), seed=exp.seed or 0,
                                           family_size=ws.get("family_size", 4), spread=ws.get("spread", 1.0))
            witnesses += list(psd_rep.witnesses)
            eigs = list(psd_rep.psd_min_eigs)
            details["methods"].append("wick-square")
            details["min_wick_square_eigenvalue"] = min(eigs)
        verdict = "refuted" if witnesses else "inconclusive"
    details["witnesses"] = [
        {"lambda": w.lam, "point": list(w.point), "value": w.value, "kind": w.kind} for w in witnesses[:16]
    ]
    details["witness_count"] = len(witnesses)
    status = {"certified-strong": "holds", "refuted": "violated", "inconclusive": "inconclusive"}[verdict]
    return [{
        "check": "strong-positivity", "kind": "positivity", "name": "strong-positivity", "density": d,
        "function": None, "lhs": None, "rhs": None, "gap": None, "tol": tol, "verdict": verdict,
        "claim": "diagnostic", "status": status, "details": details,
    }]


def _check_positivity(exp, chk):
    dens, _ = _selected(exp, chk)
    return [_guard("strong-positivity", "strong-positivity", d, None,
                   lambda d=d, m=m: _positivity_row(d, m, exp, chk)) for d, m in dens]


def _check_log_concavity(exp, chk):
    dens, _ = _selected(exp, chk)

    def run(d, m):
        g = chk.get("grid", {})
        grid = default_grid(m.dim, exp.seed or 0, g.get("lower", -6.0), g.get("upper", 6.0),
                            g.get("step", 0.1), g.get("samples", 4096))
        rep = log_concavity_grid_test(m, grid)
        verdict = "log-concave" if rep.log_concave_on_grid else "not-log-concave"
        return [{
            "check": "log-concavity", "kind": "log-concavity", "name": "log-concavity", "density": d,
            "function": None, "lhs": None, "rhs": None, "gap": None, "tol": rep.tol, "verdict": verdict,
            "claim": "diagnostic", "status": "holds" if rep.log_concave_on_grid else "violated",
            "details": {"min_eigenvalue": rep.min_eigenvalue,
                        "witnesses": [{"point": list(p), "min_eigenvalue": v} for p, v in rep.witnesses[:8]]},
        }]

    return [_guard("log-concavity", "log-concavity", d, None, lambda d=d, m=m: run(d, m)) for d, m in dens]


def _check_psd(exp, chk):
    dens, _ = _selected(exp, chk)
    trials = chk.get("trials", 100)
    size = chk.get("family_size", 4)
    k_max = chk.get("k_max", 3)
    tol = _tol(exp, "psd", PSD_TOL)
    rng = make_rng(exp.seed or 0)
    families = [rng.standard_normal((size, exp.dims)) for _ in range(trials)]
    grams = [(lambda G: G @ G.T)(rng.standard_normal((size, size))) for _ in range(2 * trials)]

    def lemma(name, build):
        return _guard("psd-lemmas", name, None, None, lambda: [_psd_row("psd-lemmas", name, [build(h) for h in families])])

    tasks = [lemma("b-matrix", lambda h: b_matrix(h, tol)[1])]
    for k in range(1, k_max + 1):
        tasks.append(lemma(f"refined-a-k{k}", lambda h, k=k: refined_a_matrix(h, k, tol)[1]))
    tasks.append(_guard("psd-lemmas", "schur-product", None, None, lambda: [_psd_row(
        "psd-lemmas", "schur-product",
        [schur_product_psd(grams[2 * i], grams[2 * i + 1], tol)[1] for i in range(trials)])]))
    for d, m in dens:
        claim = "theorem" if certify_strong_positivity(m).verdict == "certified-strong" else "no-claim"
        tasks.append(_guard("psd-lemmas", "exponential-gram", d, None, lambda d=d, m=m, claim=claim: [_psd_row(
            "psd-lemmas", "exponential-gram", [exponential_family_gram(m, h, tol)[1] for h in families], d, claim)]))
    return tasks


@dataclass(frozen=True)
class CheckSpec:
    name: str
    params: str
    build: Callable


REGISTRY: dict[str, CheckSpec] = {
    c.name: c for c in [
        CheckSpec("classical-poincare", "functions?", _check_classical),
        CheckSpec("hk", "k: int | [int] (default 1); densities? (non-Gaussian runs are no-claim)", _check_hk),
        CheckSpec("brascamp-lieb", "densities? (log_concave_quadratic only); functions?", _check_bl),
        CheckSpec("main", "densities?; functions?", _check_main),
        CheckSpec("remark5", "densities?; functions?", _check_remark5),
        CheckSpec("refined", "k: int | [int] (default 1); densities?; functions?", _check_refined),
        CheckSpec("strong-positivity",
                  "lambdas: [float >= 1]; grid: {lower, upper, step, samples}; "
                  "wick_square: {trials, family_size, spread}; densities?", _check_positivity),
        CheckSpec("log-concavity", "grid: {lower, upper, step, samples}; densities?", _check_log_concavity),
        CheckSpec("psd-lemmas", "trials (default 100); family_size (default 4); k_max (default 3); densities?",
                  _check_psd),
    ]
}


# ---------------------------------------------------------------------------
# running and serialization
# ---------------------------------------------------------------------------

def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def run_experiment(exp: Experiment, timing: bool = False) -> dict:
    start = time.perf_counter()
    tasks: list[Task] = []
    for chk in exp.checks:
        tasks.extend(REGISTRY[chk["name"]].build(exp, chk))
    threads = thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: t(), tasks))
    else:
        results = [t() for t in tasks]
    instances = [row for rows in results for row in rows]
    summary = {s: 0 for s in STATUSES}
    for row in instances:
        summary[row["status"]] += 1
    report = {"library_version": __version__, "config": exp.raw, "instances": instances, "summary": summary}
    if timing:
        report["wall_clock_seconds"] = time.perf_counter() - start
    return report


def exit_code(report: dict) -> int:
    return 2 if report["summary"]["violated"] else 0


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, bool, int)) or obj is None or isinstance(obj, str):
        return obj.item() if isinstance(obj, np.integer) else obj
    return str(obj)


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == 0.0:
        return "0.0"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "inf" not in s:
        s += ".0"
    return s


def _emit(obj, indent: int, level: int) -> str:
    pad, inner = " " * (indent * level), " " * (indent * (level + 1))
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{inner}{json.dumps(k, ensure_ascii=False)}: {_emit(v, indent, level + 1)}"
                          for k, v in obj.items())
        return "{\n" + body + "\n" + pad + "}"
    if not obj:
        return "[]"
    if all(not isinstance(v, (dict, list)) for v in obj):
        return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
    body = ",\n".join(inner + _emit(v, indent, level + 1) for v in obj)
    return "[\n" + body + "\n" + pad + "]"


def dumps_report(report: dict) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _emit(_plain(report), 2, 0) + "\n"


def report_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "name", "density", "function", "lhs", "rhs", "gap", "verdict", "status"])
    for row in report["instances"]:
        writer.writerow([
            row["check"], row.get("name", ""), row["density"] or "", row["function"] or "",
            *("" if row.get(k) is None else _fmt_float(row[k]) for k in ("lhs", "rhs", "gap")),
            row["verdict"], row["status"],
        ])
    return buf.getvalue()


def validate_report(report: dict) -> None:
    jsonschema.validate(json.loads(dumps_report(report)), _schema("report.schema.json"))


DEMO_CONFIG: dict = {
    "seed": 20240101,
    "dims": 1,
    "degree_cap": 8,
    "densities": [
        {"id": "unit", "type": "unit"},
        {"id": "mix-pm1", "type": "exp_mixture", "weights": [0.5, 0.5], "shifts": [[1.0], [-1.0]]},
        {"id": "mix-pm2", "type": "exp_mixture", "weights": [0.5, 0.5], "shifts": [[2.0], [-2.0]]},
        {"id": "gauss", "type": "log_concave_quadratic", "precision": [[1.0]]},
        {"id": "quartic", "type": "log_concave_quadratic", "precision": [[1.0]], "quartic": 1.0},
        {"id": "he2-squared", "type": "raw_chaos", "coeffs": {"0": 1.0, "2": 2.0, "4": 0.5}},
    ],
    "functions": [
        {"id": "He1", "type": "hermite", "index": [1]},
        {"id": "He2", "type": "hermite", "index": [2]},
        {"id": "He3", "type": "hermite", "index": [3]},
        {"id": "rand", "type": "random", "degree": 4, "count": 3},
    ],
    "checks": [
        {"name": "classical-poincare"},
        {"name": "hk", "k": [1, 2]},
        {"name": "main", "densities": ["unit", "mix-pm1", "mix-pm2"]},
        {"name": "remark5", "densities": ["unit", "mix-pm1", "mix-pm2"]},
        {"name": "refined", "k": [1, 2, 3], "densities": ["unit", "mix-pm1", "mix-pm2"]},
        {"name": "main", "densities": ["he2-squared"], "functions": ["He1", "He2"]},
        {"name": "brascamp-lieb", "densities": ["gauss", "quartic"], "functions": ["He1"]},
        {"name": "strong-positivity", "densities": ["unit", "mix-pm1", "he2-squared"],
         "lambdas": [1.0, 1.4142135623730951, 2.0], "wick_square": {"trials": 50}},
        {"name": "log-concavity", "densities": ["mix-pm1", "mix-pm2", "gauss"]},
        {"name": "psd-lemmas", "trials": 50, "densities": ["unit", "mix-pm1", "he2-squared"]},
    ],
}

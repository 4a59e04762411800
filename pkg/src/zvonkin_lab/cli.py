"""Command line entry point and scenario runner.

A scenario is a TOML file::

    name = "bel-demo"
    seed = 1
    [budget]
    max_path_steps = 4e7
    max_cells = 4e6

    [[operation]]
    kind = "bel"
    family = "A"
    x0 = [0.4, -0.3]
    paths = 100000
    steps = 50
    phi = "x1"
    [operation.accept]
    estimate = {target = [1.0, 0.0], se = "se", k = 3}

``zvonkin-lab run --config FILE`` validates the whole file (reporting every
violation), runs the operations and writes ``report.json`` plus CSV tables to
``--out``.  Exit status: 0 when every declared band passes, 1 when one fails,
2 on validation errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import coefficients as co
from .grid import GridFn, build_grid, dump_gridfn, sample
from .norms import INF, NormParams, localized_norm
from .sde import _jsonable

REPORT_SCHEMA = "report v1"
DEFAULT_BUDGET = {"max_path_steps": 4e7, "max_cells": 4e6}

KINDS = ("simulate", "krylov", "khasminskii", "bel", "flow", "contraction", "tightness", "weak-agree",
         "norm", "pde-solve", "maxreg", "lambda-sweep", "zvonkin", "acceptance")

SDE_KINDS = ("simulate", "krylov", "khasminskii", "bel", "flow", "contraction", "tightness", "weak-agree")

# defaults per operation kind; keys outside these tables are rejected
OP_DEFAULTS = {
    "_sde": {"family": "A", "mollify_eps": None, "shape": "gaussian-truncated", "x0": None, "T": 1.0,
             "steps": 64, "paths": 10_000, "seed": None, "workers": None},
    "simulate": {"with_flow": False, "dump": False},
    "krylov": {"f": "bump", "radius": 0.5, "p": 2.0, "q": 4.0, "r": 1.0, "window": None},
    "khasminskii": {"f": "bump", "radius": 0.5, "gamma": 1.0},
    "bel": {"phi": "x1", "t": None, "fd_delta": 0.01, "exact": None},
    "flow": {"x0_list": None, "p_list": [2, 4], "levels": None},
    "contraction": {"y2": None, "p": 2.0},
    "tightness": {"deltas": None},
    "weak-agree": {"shapes": ["gaussian-truncated", "polynomial-bump"], "centres": None, "radius": 0.15},
    "_lattice": {"d": 2, "L": math.pi, "Nx": 32, "T_grid": 1.0, "Nt": 64},
    "norm": {"function": "gaussian", "alpha": 0.0, "p": 2.0, "q": 2.0, "r": 1.0, "beta": 0.3},
    "pde-solve": {"source": "one", "lam": 0.0, "a_scale": 1.0, "dump": False},
    "maxreg": {"lam": 1.0, "alpha": 0.0, "p": 2.0, "q": 2.0, "r": 1.0, "sources": 10},
    "lambda-sweep": {"lams": [1, 4, 16, 64], "p": 2.0, "q": 2.0, "r": 1.0, "sources": 10},
    "zvonkin": {"field": "smooth-b", "mollify_eps": 0.1, "lam0": 1.0, "dump": False},
    "acceptance": {"criteria": list(range(1, 11))},
}

LATTICE_KINDS = ("norm", "pde-solve", "maxreg", "lambda-sweep", "zvonkin")


class ValidationError(ValueError):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class Scenario:
    name: str
    operations: list
    seed: int = 0
    budget: dict = field(default_factory=lambda: dict(DEFAULT_BUDGET))
    out: str | None = None
    text: str = ""
    data: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.data)


def canonical(data: dict) -> str:
    return json.dumps(_jsonable(data), sort_keys=True, separators=(",", ":"))


def config_hash(data: dict) -> str:
    return hashlib.sha256(canonical(data).encode()).hexdigest()


# -- validation ----------------------------------------------------------------

def _allowed_keys(kind: str) -> dict:
    keys = {"kind": None, "accept": None, "label": None}
    if kind in SDE_KINDS:
        keys.update(OP_DEFAULTS["_sde"])
    if kind in LATTICE_KINDS:
        keys.update(OP_DEFAULTS["_lattice"])
    keys.update(OP_DEFAULTS.get(kind, {}))
    return keys


def _check_index(prefix, v, name, violations, lower=1.0):
    if v is None:
        return
    if isinstance(v, str) and v == "inf":
        return
    if not isinstance(v, (int, float)) or not v > lower:
        violations.append(f"{prefix}: {name} must exceed {lower:g} (got {v})")


def validate_data(data: dict) -> tuple[Scenario | None, list[str]]:
    violations = []
    name = data.get("name")
    if not isinstance(name, str) or not name:
        violations.append("scenario: name must be a non-empty string")
    for key in data:
        if key not in ("name", "seed", "budget", "operation", "out", "description"):
            violations.append(f"scenario: unknown key {key!r}")
    budget = dict(DEFAULT_BUDGET)
    for k, v in (data.get("budget") or {}).items():
        if k not in budget:
            violations.append(f"budget: unknown cap {k!r}")
        elif not isinstance(v, (int, float)) or v <= 0:
            violations.append(f"budget: {k} must be a positive number")
        else:
            budget[k] = float(v)
    ops = data.get("operation")
    if not isinstance(ops, list) or not ops:
        violations.append("scenario: at least one [[operation]] is required")
        ops = []
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        violations.append("scenario: seed must be a nonnegative integer")
    cleaned = []
    for i, op in enumerate(ops):
        prefix = f"operation[{i}]"
        kind = op.get("kind")
        if kind not in KINDS:
            violations.append(f"{prefix}: unknown kind {kind!r}; choose from {', '.join(KINDS)}")
            continue
        allowed = _allowed_keys(kind)
        for k in op:
            if k not in allowed:
                violations.append(f"{prefix}: unknown parameter {k!r} for kind {kind}")
        full = {k: v for k, v in allowed.items()}
        full.update(op)
        for key in ("p", "q"):
            if key in full:
                _check_index(prefix, full[key], key, violations)
        if "r" in full and not (isinstance(full["r"], (int, float)) and full["r"] > 0):
            violations.append(f"{prefix}: r must be positive")
        if kind in SDE_KINDS:
            fam = str(full["family"]).upper()
            if fam not in co.FAMILIES:
                violations.append(f"{prefix}: unknown family {full['family']!r}")
            else:
                d = co.DEFAULTS[fam]["d"]
                if fam in "CDE" and full["mollify_eps"] is None:
                    violations.append(f"{prefix}: family {fam} is singular and needs mollify_eps")
                if full["x0"] is not None and len(full["x0"]) != d:
                    violations.append(f"{prefix}: x0 must have {d} components for family {fam}")
            for key in ("paths", "steps"):
                if not isinstance(full[key], int) or full[key] < 1:
                    violations.append(f"{prefix}: {key} must be a positive integer")
            if isinstance(full["paths"], int) and isinstance(full["steps"], int):
                cost = full["paths"] * full["steps"]
                if kind == "weak-agree":
                    cost *= 2
                if cost > budget["max_path_steps"]:
                    violations.append(f"{prefix}: paths*steps = {cost:.3g} exceeds budget.max_path_steps = "
                                      f"{budget['max_path_steps']:.3g}")
            if not isinstance(full["T"], (int, float)) or full["T"] <= 0:
                violations.append(f"{prefix}: T must be positive")
        if kind in LATTICE_KINDS:
            if full["d"] not in (1, 2, 3):
                violations.append(f"{prefix}: d must be 1, 2 or 3")
            elif isinstance(full["Nx"], int) and isinstance(full["Nt"], int):
                cells = full["Nx"] ** full["d"] * (full["Nt"] + 1)
                if cells > budget["max_cells"]:
                    violations.append(f"{prefix}: lattice cells {cells:.3g} exceed budget.max_cells = "
                                      f"{budget['max_cells']:.3g}")
            else:
                violations.append(f"{prefix}: Nx and Nt must be integers")
        if kind == "acceptance":
            bad = [c for c in full["criteria"] if c not in range(1, 11)]
            if bad:
                violations.append(f"{prefix}: unknown criteria {bad}")
        if kind == "zvonkin" and full["field"] not in ("smooth-b", "C", "D"):
            violations.append(f"{prefix}: zvonkin field must be 'smooth-b', 'C' or 'D'")
        if kind == "maxreg" and not 0 <= full["alpha"] < 2 - 2 / (INF if full["q"] == "inf" else full["q"]):
            violations.append(f"{prefix}: alpha must lie in [0, 2 - 2/q)")
        if full.get("seed") is None:
            full["seed"] = (seed if isinstance(seed, int) else 0) + i
        cleaned.append(full)
    if violations:
        return None, violations
    return Scenario(name, cleaned, seed, budget, data.get("out"), data=data), []


def validate(scenario_text: str) -> Scenario:
    """Parse and validate; raises :class:`ValidationError` listing every violation."""
    try:
        data = tomllib.loads(scenario_text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError([f"scenario: not valid TOML ({exc})"]) from exc
    sc, violations = validate_data(data)
    if violations:
        raise ValidationError(violations)
    sc.text = scenario_text
    return sc


# -- operation runners -----------------------------------------------------------

def _field(op) -> co.CoefficientField:
    fam = str(op["family"]).upper()
    kw = {}
    if op.get("mollify_eps") is not None:
        kw["eps"] = float(op["mollify_eps"])
    return co.family(fam, shape=op["shape"], **kw)


def _x0(op, cf) -> np.ndarray:
    return np.zeros(cf.d) if op["x0"] is None else np.asarray(op["x0"], float)


def _test_function(name: str, cf, op):
    if cf.lattice is not None:
        g = cf.lattice
    else:
        g = build_grid(cf.d, math.pi, 64, 1.0, 1)
    if name == "one":
        return GridFn(g, np.ones((1,) + g.spatial_shape))
    if name == "bump":
        from .sde import bump_battery

        return bump_battery(g, [_x0(op, cf)], float(op["radius"]))[0]
    if name == "gaussian":
        return GridFn(g, np.exp(-np.sum(g.points() ** 2, axis=-1))[None])
    raise ValueError(f"unknown test function {name!r}")


def _phi(name: str):
    table = {
        "x1": lambda x: x[:, 0],
        "sin": lambda x: np.sin(x[:, 0]),
        "bump": lambda x: np.exp(-np.sum((x - 0.2) ** 2, axis=-1)),
    }
    if name not in table:
        raise ValueError(f"unknown phi {name!r}")
    return table[name]


def _norm_params(op) -> NormParams:
    q = INF if op.get("q") == "inf" else float(op.get("q", 2.0))
    return NormParams(alpha=float(op.get("alpha", 0.0)), p=float(op["p"]), q=q, r=float(op["r"]))


def _lattice(op):
    return build_grid(int(op["d"]), float(op["L"]), int(op["Nx"]), float(op["T_grid"]), int(op["Nt"]))


def _run_op(op: dict, out_dir: str | None, index: int, workers: int):
    from . import pde, sde, zvonkin
    from .acceptance import run_all

    kind = op["kind"]
    w = op.get("workers") or workers
    tables = {}
    if kind in SDE_KINDS:
        cf = _field(op)
        x0 = _x0(op, cf)
        T, Nt, M, seed = float(op["T"]), int(op["steps"]), int(op["paths"]), op["seed"]
    if kind == "simulate":
        ens = sde.simulate(cf, x0, T, Nt, M, seed, with_flow=op["with_flow"], workers=w)
        XT = ens.X[:, -1]
        res = {"mean_XT": XT.mean(axis=0), "cov_XT": np.atleast_2d(np.cov(XT.T)),
               "se_mean": XT.std(axis=0, ddof=1) / math.sqrt(M)}
        if op["with_flow"]:
            res["mean_JT"] = ens.J[:, -1].mean(axis=0)
        if op["dump"] and out_dir:
            ens.dump(os.path.join(out_dir, f"op{index}_paths.bin"))
    elif kind == "krylov":
        ens = sde.simulate(cf, x0, T, Nt, M, seed, workers=w)
        f = _test_function(op["f"], cf, op)
        window = tuple(op["window"]) if op["window"] else None
        res = sde.krylov_estimate(ens, f, _norm_params(op), window).to_dict()
    elif kind == "khasminskii":
        ens = sde.simulate(cf, x0, T, Nt, M, seed, workers=w)
        res = sde.khasminskii_estimate(ens, _test_function(op["f"], cf, op), float(op["gamma"])).to_dict()
    elif kind == "bel":
        ens = sde.simulate(cf, x0, T, Nt, M, seed, with_flow=True, workers=w)
        res = sde.bel_gradient(ens, _phi(op["phi"]), op["t"], op["fd_delta"]).to_dict()
        if op["exact"] is not None:
            res["exact"] = op["exact"]
    elif kind == "flow":
        pts = op["x0_list"] or [list(x0)]
        rep = sde.flow_moment_survey(cf, pts, T, op["p_list"],
                                     op["levels"], M, seed, Nt, w)
        res = rep.to_dict()
        tables["flow"] = rep.table
    elif kind == "contraction":
        y2 = op["y2"] if op["y2"] is not None else list(x0 + np.eye(cf.d)[0] * 0.1)
        res = sde.pathwise_contraction(cf, x0, y2, T, float(op["p"]), M, seed, Nt, w).to_dict()
    elif kind == "tightness":
        ens = sde.simulate(cf, x0, T, Nt, M, seed, workers=w)
        # default: the four finest dyadic gaps that sit on the simulation grid
        deltas = op["deltas"] or [T * 2.0 ** -k for k in range(1, 31) if 2 ** k <= Nt and Nt % 2 ** k == 0][-4:]
        rep = sde.tightness_modulus(ens, deltas)
        res = rep.to_dict()
        tables["tightness"] = rep.table
    elif kind == "weak-agree":
        fields = [cf.with_shape(s) if cf.family in "CDE" else cf for s in op["shapes"]]
        g = cf.lattice or build_grid(cf.d, math.pi, 64, 1.0, 1)
        centres = op["centres"] or [list(x0)]
        battery = sde.bump_battery(g, centres, float(op["radius"]))
        rep = sde.weak_agreement(fields, battery, x0, T, Nt, M, seed, w)
        res = rep.to_dict()
        tables["weak_agreement"] = rep.table
    elif kind == "norm":
        grid = _lattice(op)
        fn = op["function"]
        if fn == "gaussian":
            f = sample(lambda x: np.exp(-np.sum(x ** 2, axis=-1)), grid)
        elif fn == "one":
            f = GridFn(grid, np.ones((1,) + grid.spatial_shape))
        elif fn == "power":
            beta = float(op["beta"])
            f = sample(lambda x: np.linalg.norm(x, axis=-1) ** (-beta), grid)
        else:
            raise ValueError(f"unknown norm function {fn!r}")
        res = localized_norm(f, _norm_params(op)).to_dict()
    elif kind == "pde-solve":
        grid = _lattice(op)
        a = pde.identity_diffusion(grid, float(op["a_scale"]))
        if op["source"] == "one":
            f = GridFn(grid, np.ones((1,) + grid.spatial_shape))
        elif op["source"] == "sin":
            f = sample(lambda x: np.sin(x[..., 0]), grid)
        else:
            raise ValueError(f"unknown source {op['source']!r}")
        u = pde.solve_forward(pde.ParabolicProblem(a, None, float(op["lam"]), f))
        res = {"max_abs_u": u.max_abs(), "u_T_mean": float(u.values[-1].mean())}
        if op["dump"] and out_dir:
            dump_gridfn(u, os.path.join(out_dir, f"op{index}_u.gridfn"))
    elif kind == "maxreg":
        grid = _lattice(op)
        rep = pde.max_reg_survey(pde.identity_diffusion(grid), None, float(op["lam"]),
                                 pde.smooth_source_family(grid, int(op["sources"])), _norm_params(op))
        res = json.loads(rep.to_json())
        if out_dir:
            rep.to_csv(os.path.join(out_dir, f"op{index}_maxreg.csv"))
    elif kind == "lambda-sweep":
        grid = _lattice(op)
        sweep = pde.lambda_sweep(pde.identity_diffusion(grid), pde.smooth_source_family(grid, int(op["sources"])),
                                 op["lams"], _norm_params(op))
        vals = [s["family_max"] for s in sweep]
        res = {"sweep": sweep, "spread": max(vals) / min(vals)}
        tables["lambda_sweep"] = [{"lam": s["lam"], "family_max": s["family_max"]} for s in sweep]
    elif kind == "zvonkin":
        grid = _lattice(op)
        if op["field"] == "smooth-b":
            cf_z = co.smooth_drift_example()
        else:
            cf_z = co.family(op["field"], eps=float(op["mollify_eps"]))
        tf = zvonkin.build_transform(cf_z, None, float(op["T_grid"]), grid, float(op["lam0"]))
        res = tf.summary()
        if op["dump"] and out_dir:
            dump_gridfn(tf.u, os.path.join(out_dir, f"op{index}_u.gridfn"))
    elif kind == "acceptance":
        results = run_all(op["criteria"], workers=w, echo=None)
        res = {"criteria": [r.to_dict() for r in results], "lines": [r.line() for r in results],
               "all_passed": all(r.passed for r in results)}
    else:  # pragma: no cover - validated earlier
        raise ValueError(kind)
    return _jsonable(res), tables


def _lookup(res, path):
    cur = res
    for part in path.split("."):
        cur = cur[part]
    return cur


def evaluate_bands(op: dict, res: dict) -> bool | None:
    """Apply ``[operation.accept]`` bands; ``None`` when none are declared."""
    if op["kind"] == "acceptance" and not op.get("accept"):
        return bool(res["all_passed"])
    bands = op.get("accept")
    if not bands:
        return None
    ok = True
    for metric, band in bands.items():
        val = np.asarray(_lookup(res, metric), dtype=float)
        if "min" in band:
            ok &= bool(np.all(val >= band["min"]))
        if "max" in band:
            ok &= bool(np.all(val <= band["max"]))
        if "target" in band:
            tgt = np.asarray(band["target"], dtype=float)
            if "se" in band:
                se = np.asarray(_lookup(res, band["se"]), dtype=float)
                ok &= bool(np.all(np.abs(val - tgt) <= band.get("k", 3.0) * se + band.get("atol", 0.0)))
            else:
                ok &= bool(np.all(np.abs(val - tgt) <= band.get("atol", 0.0)))
    return ok


def _write_csv(path, rows):
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(_jsonable(v)) if isinstance(v, (list, dict, np.ndarray)) else v
                        for k, v in r.items()})


def run(sc: Scenario, out_dir: str | None = None, workers: int = 1) -> dict:
    """Execute every operation (concurrently up to ``workers``) and assemble the report in declaration order."""
    out_dir = out_dir or sc.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()

    def one(i):
        op = sc.operations[i]
        start = time.perf_counter()
        entry = {"index": i, "kind": op["kind"], "label": op.get("label"), "seed": op.get("seed")}
        try:
            res, tables = _run_op(op, out_dir, i, 1 if workers > 1 and len(sc.operations) > 1 else workers)
            entry["result"] = res
            entry["passed"] = evaluate_bands(op, res)
            if out_dir:
                for name, rows in tables.items():
                    _write_csv(os.path.join(out_dir, f"op{i}_{name}.csv"), rows)
        except Exception as exc:  # captured per operation; the run continues
            entry["error"] = f"{type(exc).__name__}: {exc}"
            entry["passed"] = False
        entry["elapsed"] = time.perf_counter() - start
        return entry

    idx = range(len(sc.operations))
    if workers > 1 and len(sc.operations) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            entries = list(ex.map(one, idx))
    else:
        entries = [one(i) for i in idx]
    report = {
        "schema": REPORT_SCHEMA,
        "scenario": _jsonable(sc.data),
        "config_hash": sc.config_hash,
        "operations": entries,
        "passed": all(e["passed"] is not False for e in entries),
        "wall_clock": time.perf_counter() - t0,
    }
    if out_dir:
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2)
    return report


def run_scenario_text(text: str, out_dir: str | None = None, workers: int = 1) -> tuple[dict, int]:
    sc = validate(text)
    report = run(sc, out_dir, workers)
    return report, 0 if report["passed"] else 1


def list_families() -> list[dict]:
    return co.catalog()


def bundled_scenario(name: str = "acceptance-suite") -> str:
    return resources.files("zvonkin_lab").joinpath("scenarios", f"{name}.toml").read_text()


# -- argparse front end ---------------------------------------------------------------

def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _add_common(p):
    p.add_argument("--config", help="scenario TOML file (overrides the single-operation flags)")
    p.add_argument("--out", help="output directory for report.json and CSV tables")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zvonkin-lab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario file")
    _add_common(p)
    p.add_argument("file", nargs="?")
    p = sub.add_parser("validate", help="validate a scenario file and list every violation")
    p.add_argument("file")
    sub.add_parser("list-families", help="print the coefficient family catalog")
    p = sub.add_parser("acceptance", help="run the bundled acceptance-suite scenario")
    _add_common(p)
    p.add_argument("--criteria", type=int, nargs="*")
    for kind in KINDS:
        if kind == "acceptance":
            continue
        p = sub.add_parser(kind, help=f"single '{kind}' operation")
        _add_common(p)
        if kind in SDE_KINDS:
            p.add_argument("--family")
            p.add_argument("--paths", type=int)
            p.add_argument("--steps", type=int)
            p.add_argument("--mollify-eps", type=float)
        p.add_argument("--param", "-P", action="append", default=[], metavar="KEY=VALUE",
                       help="operation parameter (TOML literal), repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-families":
        for row in list_families():
            print(json.dumps(row))
        return 0
    if args.command == "validate":
        try:
            sc = validate(open(args.file).read())
        except ValidationError as exc:
            for v in exc.violations:
                print(v, file=sys.stderr)
            return 2
        print(json.dumps({"valid": True, "name": sc.name, "operations": len(sc.operations),
                          "config_hash": sc.config_hash}))
        return 0
    if args.command == "run" or getattr(args, "config", None):
        path = args.config or getattr(args, "file", None)
        if not path:
            print("run needs a scenario file (--config FILE)", file=sys.stderr)
            return 2
        text = open(path).read()
        if args.seed is not None:
            text = _with_seed(text, args.seed)
    elif args.command == "acceptance":
        text = bundled_scenario()
        if args.criteria:
            data = tomllib.loads(text)
            data["operation"][0]["criteria"] = args.criteria
            text = _to_toml(data)
    else:
        op = {"kind": args.command}
        if args.command in SDE_KINDS:
            for flag, key in (("family", "family"), ("paths", "paths"), ("steps", "steps"),
                              ("mollify_eps", "mollify_eps")):
                val = getattr(args, flag)
                if val is not None:
                    op[key] = val
        for item in args.param:
            if "=" not in item:
                print(f"--param expects KEY=VALUE, got {item!r}", file=sys.stderr)
                return 2
            k, v = item.split("=", 1)
            op[k.strip().replace("-", "_")] = _parse_value(v.strip())
        data = {"name": args.command, "operation": [op]}
        if args.seed is not None:
            data["seed"] = args.seed
        text = _to_toml(data)
    try:
        sc = validate(text)
    except ValidationError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return 2
    report = run(sc, args.out, args.workers)
    for e in report["operations"]:
        if e["kind"] == "acceptance" and "result" in e:
            for line in e["result"]["lines"]:
                print(line)
    summary = {"schema": report["schema"], "name": sc.name, "config_hash": report["config_hash"],
               "passed": report["passed"], "operations": [
                   {k: e.get(k) for k in ("index", "kind", "seed", "passed", "error")} for e in report["operations"]]}
    if args.command not in ("run", "acceptance"):
        summary["result"] = report["operations"][0].get("result")
    print(json.dumps(summary, indent=2))
    return 0 if report["passed"] else 1


def _with_seed(text: str, seed: int) -> str:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError:
        return text
    data["seed"] = seed
    return _to_toml(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(k)} = {_toml_value(x)}" for k, x in v.items()) + "}"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(v)


def _to_toml(data: dict) -> str:
    lines = []
    for k, v in data.items():
        if k not in ("operation", "budget"):
            lines.append(f"{k} = {_toml_value(v)}")
    if "budget" in data:
        lines.append("[budget]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in data["budget"].items()]
    for op in data.get("operation", []):
        lines.append("[[operation]]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in op.items()]
    return "\n".join(lines) + "\n"


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

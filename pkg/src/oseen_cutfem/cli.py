"""Command line entry point: ``oseen-cutfem {solve,converge,verify,export-mesh}``.

Runs are described by a JSON configuration validated against
:data:`CONFIG_SCHEMA`. Every command writes CSV files with a fixed column
order and 17 significant digits, so identical configurations produce
byte-identical output.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
from threadpoolctl import threadpool_limits

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CHECKS = ("coercivity", "assumption", "trace", "norm_equivalence", "energy")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_PAIR = {"type": "string", "pattern": r"(?i)^\s*(mini|p3[-_ ]?p0|(taylor[-_ ]?hood|th)\s*\(?\d*\)?)\s*$"}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "oseen-cutfem run configuration",
    "type": "object",
    "required": ["mesh", "domain", "pair", "dt", "T"],
    "additionalProperties": False,
    "properties": {
        "mesh": {
            "type": "object",
            "required": ["box", "n"],
            "additionalProperties": False,
            "properties": {
                "box": {"type": "array", "minItems": 2, "maxItems": 2,
                        "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM}},
                "n": {"type": "integer", "minimum": 1},
            },
        },
        "domain": {
            "type": "object",
            "required": ["preset"],
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["static_circle", "translating_circle", "rotating_ellipse"]},
                "params": {"type": "object"},
            },
        },
        "pair": _PAIR,
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["manufactured", "zero", "random_initial"]},
                "k": _POS,
                "time_profile": {"enum": ["constant", "cos", "linear", "zero"]},
                "nu": _POS,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "dt": {
            "oneOf": [
                {"type": "object", "required": ["value"], "additionalProperties": False,
                 "properties": {"value": _POS}},
                {"type": "object", "required": ["c", "alpha"], "additionalProperties": False,
                 "properties": {"c": _POS, "alpha": {"type": "number", "minimum": 1, "maximum": 2}}},
            ],
        },
        "T": _POS,
        "penalties": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": _POS, "gamma_s": _POS, "gamma_J": _POS, "c_delta": _POS,
            },
        },
        "integrator": {"enum": ["bdf1", "bdf2"]},
        "skew_convection": {"type": "boolean"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "stride": {"type": "integer", "minimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _POS},
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"h": {"type": "array", "minItems": 1, "items": _POS}},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "shifts": {"type": "integer", "minimum": 1},
                "pairs": {"type": "array", "minItems": 1, "items": _PAIR},
                "samples": {"type": "integer", "minimum": 1},
                "energy_steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "problem": {"kind": "manufactured", "k": 1.0, "time_profile": "constant", "nu": 1.0, "seed": 0},
    "penalties": {"eta": None, "gamma_s": 1.0, "gamma_J": 1.0, "c_delta": 2.0},
    "integrator": "bdf1",
    "skew_convection": False,
    "output": {"dir": "out", "stride": 0},
    "solver": {"tol": 1e-10},
    "converge": {"h": []},
    "verify": {"shifts": 10, "pairs": None, "samples": 30, "energy_steps": 40, "seed": 0},
}

log = logging.getLogger("oseen_cutfem")


class ConfigValidationError(Exception):
    def __init__(self, message, path):
        super().__init__(message)
        self.path = path


def _error_path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        # message is "'name' is a required property"
        missing = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(missing)
    elif err.validator == "additionalProperties" and "'" in err.message:
        parts.append(err.message.split("'")[1])
    return "/".join(parts) or "/"


def validate_config(cfg) -> dict:
    """Validate ``cfg`` and return a copy with defaults filled in."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(list(e.absolute_path)), str(e.message)))
    if errors:
        err = errors[0]
        raise ConfigValidationError(err.message, _error_path(err))
    out = copy.deepcopy(cfg)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            merged = dict(val)
            merged.update(out.get(key, {}))
            out[key] = merged
        else:
            out.setdefault(key, val)
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"invalid JSON: {exc}", "/") from exc
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# builders
def _spacing(cfg) -> float:
    box = cfg["mesh"]["box"]
    return (box[0][1] - box[0][0]) / cfg["mesh"]["n"]


def dt_for(cfg, spacing: float) -> float:
    law = cfg["dt"]
    if "value" in law:
        return float(law["value"])
    return float(law["c"]) * spacing ** float(law["alpha"])


def build_mesh(cfg, spacing: float | None = None):
    from .mesh import build_uniform_mesh
    from .problems import spacing_to_n

    box = tuple(tuple(map(float, b)) for b in cfg["mesh"]["box"])
    n = cfg["mesh"]["n"] if spacing is None else spacing_to_n(box, spacing)
    return build_uniform_mesh(box, n)


def build_problem(cfg):
    from .fespace import ElementPair
    from .geometry import make_domain
    from .problems import manufactured_problem, random_initial_problem, zero_problem

    dom = make_domain(cfg["domain"]["preset"], cfg["domain"].get("params"), T=float(cfg["T"]))
    pair = ElementPair.parse(cfg["pair"])
    pc = cfg["problem"]
    if pc["kind"] == "zero":
        return zero_problem(dom, pair)
    if pc["kind"] == "random_initial":
        return random_initial_problem(dom, pair, seed=pc["seed"])
    return manufactured_problem(dom, pair, k=pc["k"], time_profile=pc["time_profile"], nu=pc["nu"])


def build_penalties(cfg):
    from .forms import Penalties

    pen = cfg["penalties"]
    return Penalties(eta=pen["eta"], gamma_s=pen["gamma_s"], gamma_J=pen["gamma_J"],
                     nu=cfg["problem"]["nu"], skew=cfg["skew_convection"])


def build_params(cfg, dt: float):
    from .stepper import StepParams

    return StepParams(dt=dt, T=float(cfg["T"]), integrator=cfg["integrator"],
                      c_delta=cfg["penalties"]["c_delta"], penalties=build_penalties(cfg),
                      tol=cfg["solver"]["tol"])


# ---------------------------------------------------------------------------
# commands
def cmd_solve(cfg, out: Path) -> int:
    from .errors import CutFEMError
    from .stepper import run

    mesh = build_mesh(cfg)
    params = build_params(cfg, dt_for(cfg, _spacing(cfg)))
    try:
        res = run(build_problem(cfg), mesh, params, out_dir=out, stride=cfg["output"]["stride"])
    except CutFEMError as exc:
        if isinstance(exc, ValueError):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("wrote %s (%d rows)", out / "run.csv", len(res.rows))
    return EXIT_OK


def cmd_converge(cfg, out: Path, spacings=None) -> int:
    from .analysis import convergence_study
    from .errors import CutFEMError

    spacings = list(spacings or cfg["converge"]["h"] or [_spacing(cfg)])
    box = tuple(tuple(map(float, b)) for b in cfg["mesh"]["box"])
    try:
        table = convergence_study(build_problem(cfg), box, spacings, lambda h: dt_for(cfg, h),
                                  lambda dt: build_params(cfg, dt), out_dir=out)
    except CutFEMError as exc:
        if isinstance(exc, ValueError):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for row in table.rows:
        log.info("%s", row)
    return EXIT_OK


def _circle_params(cfg):
    params = dict(cfg["domain"].get("params") or {})
    return float(params.get("radius", 1.0)), tuple(params.get("center", (0.0, 0.0)))


def run_checks(cfg, names) -> list:
    """Evaluate the selected stability checks; one report per (check, pair)."""
    from . import analysis as an
    from .fespace import ElementPair
    from .problems import random_initial_problem
    from .geometry import make_domain
    from .stepper import StepParams, run

    mesh = build_mesh(cfg)
    pen = build_penalties(cfg)
    vc = cfg["verify"]
    pairs = [ElementPair.parse(p) for p in (vc["pairs"] or [cfg["pair"]])]
    radius, center = _circle_params(cfg)
    needs_sweep = any(n != "energy" for n in names)
    geoms = an.sweep_geometries(mesh, radius, vc["shifts"], center) if needs_sweep else []
    reports = []
    for name in names:
        for pair in pairs:
            if name == "coercivity":
                reports.append(an.check_coercivity(pair, geoms, pen))
            elif name == "assumption":
                reports.append(an.check_assumption(pair, geoms, vc["samples"], vc["seed"]))
            elif name == "trace":
                reports.append(an.check_trace_inequality(pair, geoms))
            elif name == "norm_equivalence":
                reports.append(an.check_norm_equivalence(pair, geoms))
            elif name == "energy":
                steps = vc["energy_steps"]
                dt = dt_for(cfg, _spacing(cfg))
                dom = make_domain(cfg["domain"]["preset"], cfg["domain"].get("params"), T=steps * dt)
                prob = random_initial_problem(dom, pair, seed=vc["seed"])
                params = StepParams(dt=dt, T=steps * dt, integrator="bdf1", c_delta=cfg["penalties"]["c_delta"],
                                    penalties=pen, tol=cfg["solver"]["tol"])
                res = run(prob, mesh, params, monitor=lambda cur, prev: an.energy_step_terms(cur, prev)
                          if prev is not None else {})
                rep = an.check_energy_inequality(res.rows)
                rep.check = f"energy[{pair.label}]"
                reports.append(rep)
    return reports


def cmd_verify(cfg, out: Path, checks) -> int:
    from .analysis import write_reports_csv

    names = list(CHECKS) if "all" in checks else list(dict.fromkeys(checks))
    reports = run_checks(cfg, names)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(out / "verify.csv", reports)
    for r in reports:
        log.info("%s %s constant=%.6g", "PASS" if r.passed else "FAIL", r.check, r.constant)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILURE


def cmd_export_mesh(cfg, out: Path) -> int:
    import numpy as np

    from .geometry import build_geometry, make_domain

    mesh = build_mesh(cfg)
    dom = make_domain(cfg["domain"]["preset"], cfg["domain"].get("params"), T=float(cfg["T"]))
    geom = build_geometry(dom, mesh, 0.0, dt_for(cfg, _spacing(cfg)), cfg["penalties"]["c_delta"])
    out.mkdir(parents=True, exist_ok=True)
    classes = {"INSIDE": 0, "CUT": 1, "STRIP": 2, "FAR": 3}
    names = geom.cell_class_names()
    mesh.write_vtk(out / "mesh.vtk", cell_data={"class": np.array([classes[c] for c in names], dtype=float)},
                   point_data={"phi": geom.phi})
    return EXIT_OK


# ---------------------------------------------------------------------------
def _configure_logging():
    level = os.environ.get("OSEEN_CUTFEM_LOG", "WARNING").upper()
    if level.isdigit():
        lvl = int(level)
    else:
        lvl = getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oseen-cutfem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: config output.dir)")
        p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps results bit reproducible)")
        return p

    common(sub.add_parser("solve", help="run the time stepper and write run.csv"))
    pc = common(sub.add_parser("converge", help="convergence study over a list of grid spacings"))
    pc.add_argument("--h", type=float, nargs="+", default=None, help="grid spacings, strictly decreasing")
    pv = common(sub.add_parser("verify", help="numerical stability checks"))
    pv.add_argument("--check", action="append", choices=CHECKS + ("all",), default=None,
                    help="check to run (repeatable; default all)")
    common(sub.add_parser("export-mesh", help="write the background mesh with cell classes as VTK"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        cfg = load_config(args.config)
    except ConfigValidationError as exc:
        print(f"config error at {exc.path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg["output"]["dir"])
    from .errors import InvalidArgumentError

    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return _dispatch(args, cfg, out)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args, cfg, out) -> int:
    if args.command == "solve":
        return cmd_solve(cfg, out)
    if args.command == "converge":
        return cmd_converge(cfg, out, args.h)
    if args.command == "verify":
        return cmd_verify(cfg, out, args.check or ["all"])
    return cmd_export_mesh(cfg, out)

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command line front end: JSON job configs in, CSV/JSON artifacts and ``report.json`` out.

Exit status is 0 on success, 2 when the mathematics says stop (explosion,
transversality loss, solver blow-up) and 1 on errors.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fields import field_from_spec
from .grid_decomp import evolve_decomposition, verify_planar_decomposition
from .jordan_cascade import (
    CascadeExplosion,
    cascade_decompose,
    factor_matrix_with_real_log,
    recompose_cascade,
)
from .linear_decomp import (
    BlockPartition,
    check_linearity_structure,
    decompose_blocks,
    recompose,
    rotation_oracle,
    solve_linear_flow,
)
from .rde_solver import solve_rde
from .rough_core import (
    TimeGrid,
    chen_defect,
    geometricity_defect,
    holder_norms,
    lift_brownian,
    lift_linear,
    lift_smooth,
)
from .serialization import (
    read_rough_path,
    read_samples,
    write_diffeo_snapshot,
    write_factorization,
    write_json,
    write_matrix_path,
    write_rough_path,
    write_trajectory,
)

__all__ = ["main", "run", "ConfigError", "COMMANDS", "load_config"]

EXIT_OK, EXIT_ERROR, EXIT_EVENT = 0, 1, 2


class ConfigError(ValueError):
    """Invalid job configuration; ``line`` points into the config file when known."""

    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)
        self.line = line


# parameter schemas: name -> (default, validator description, check)

def _pos_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _nonneg_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _pos_float(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


def _alpha(v):
    return isinstance(v, (int, float)) and 1 / 3 < v <= 0.5


def _square(v):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        return False
    return a.ndim == 2 and a.shape[0] == a.shape[1] and a.shape[0] >= 1 and np.all(np.isfinite(a))


def _vector(v):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        return False
    return a.ndim == 1 and a.size >= 1


def _dict(v):
    return isinstance(v, dict)


def _bool(v):
    return isinstance(v, bool)


DRIVER = {
    "N": (1000, "a positive integer", _pos_int),
    "T": (1.0, "a positive number", _pos_float),
    "alpha": (0.5, "a number in (1/3, 1/2]", _alpha),
    "seed": (0, "a non-negative integer", _nonneg_int),
    "driver": ({"kind": "linear", "velocity": [1.0]}, "an object", _dict),
}

SCHEMAS = {
    "lift": {
        **DRIVER,
        "driver": ({"kind": "brownian", "d": 1, "refinement": 1}, "an object", _dict),
        "checks": (200, "a non-negative integer", _nonneg_int),
    },
    "solve": {
        **DRIVER,
        "field": ({"type": "rotation"}, "an object", _dict),
        "y0": ([1.0, 0.0], "a vector", _vector),
        "with_jacobian": (False, "true or false", _bool),
    },
    "decompose-linear": {
        **DRIVER,
        "A": (None, "a square matrix", _square),
        "k": (1, "a positive integer", _pos_int),
        "threshold": (1e6, "a positive number", _pos_float),
    },
    "cascade": {
        **DRIVER,
        "A": (None, "a square matrix", _square),
        "threshold": (1e6, "a positive number", _pos_float),
    },
    "factorize": {
        "M": (None, "a square matrix", _square),
        "check_steps": (400, "a non-negative integer", _nonneg_int),
    },
    "grid-decompose": {
        **DRIVER,
        "T": (0.3, "a positive number", _pos_float),
        "field": ({"type": "planar-quadratic", "c": 0.1}, "an object", _dict),
        "nx": (101, "an integer >= 2", lambda v: _pos_int(v) and v >= 2),
        "ny": (101, "an integer >= 2", lambda v: _pos_int(v) and v >= 2),
        "bounds": ([-2.0, 2.0, -2.0, 2.0], "four numbers [x1min, x1max, x2min, x2max]",
                   lambda v: _vector(v) and len(v) == 4),
        "margin": (0.2, "a number in [0, 0.5)", lambda v: isinstance(v, (int, float)) and 0 <= v < 0.5),
        "dump_every": (0, "a non-negative integer (0: start and end only)", _nonneg_int),
        "threshold": (1e6, "a positive number", _pos_float),
    },
    "verify": {
        "suite": ("rotation", "the name of a bundled suite", lambda v: v in SUITES),
    },
}
COMMANDS = tuple(SCHEMAS)
CONFIG_KEYS = {"command", "inputs", "parameters", "output_dir"}
INPUT_KEYS = {"lift": {"samples"}, "solve": {"driver"}, "decompose-linear": {"driver"},
              "cascade": {"driver"}, "grid-decompose": {"driver"}, "factorize": set(), "verify": set()}


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config(path) -> tuple:
    """Parse a config file; returns ``(config_dict, raw_text)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", str(path), exc.lineno) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a JSON object", str(path), 1)
    return cfg, text


def _parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(d.get(p), dict):
            d[p] = {}
        d = d[p]
    d[parts[-1]] = value


def resolve_config(args, cfg: dict, text: str | None, source: str | None) -> dict:
    """Merge file config, flag overrides and defaults; validate everything."""
    for key in cfg:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}; expected one of {sorted(CONFIG_KEYS)}",
                              source, _line_of(text, key))
    command = args.command or cfg.get("command")
    if cfg.get("command") and args.command and cfg["command"] != args.command:
        raise ConfigError(f"config command {cfg['command']!r} conflicts with {args.command!r}",
                          source, _line_of(text, "command"))
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; expected one of {list(COMMANDS)}",
                          source, _line_of(text, "command"))
    schema = SCHEMAS[command]
    params = copy.deepcopy(cfg.get("parameters", {}))
    if not isinstance(params, dict):
        raise ConfigError("'parameters' must be an object", source, _line_of(text, "parameters"))
    inputs = copy.deepcopy(cfg.get("inputs", {}))
    if not isinstance(inputs, dict):
        raise ConfigError("'inputs' must be an object", source, _line_of(text, "inputs"))

    for key in params:
        if key not in schema:
            raise ConfigError(f"unknown parameter {key!r} for {command}; expected one of {sorted(schema)}",
                              source, _line_of(text, key))
    for item in args.param or []:
        key, value = _parse_override(item)
        if key.split(".")[0] not in schema:
            raise ConfigError(f"unknown parameter {key!r} for {command} (from --param)")
        _set_dotted(params, key, value)
    if args.seed is not None:
        if "seed" not in schema:
            raise ConfigError(f"--seed is not used by {command}")
        params["seed"] = args.seed

    resolved = {}
    for key, (default, desc, check) in schema.items():
        value = params.get(key, default)
        if isinstance(default, dict) and isinstance(value, dict) and key in params:
            # fill omitted entries from the default only when the kind is unchanged
            kind = value.get("kind", value.get("type"))
            if kind in (None, default.get("kind", default.get("type"))):
                value = {**default, **value}
        if value is None:
            raise ConfigError(f"parameter {key!r} is required for {command}", source, _line_of(text, "parameters"))
        if not check(value):
            raise ConfigError(f"parameter {key!r} must be {desc}, got {value!r}", source, _line_of(text, key))
        resolved[key] = value

    for key, value in inputs.items():
        if key not in INPUT_KEYS[command]:
            raise ConfigError(f"unknown input {key!r} for {command}", source, _line_of(text, key))
        base = Path(source).parent if source else Path.cwd()
        if not (base / value).exists():
            raise ConfigError(f"input file {value!r} does not exist", source, _line_of(text, key))

    output = args.output or cfg.get("output_dir") or "roughflow-out"
    return {"command": command, "inputs": inputs, "parameters": resolved, "output_dir": str(output)}


# drivers

def _make_driver(p: dict, inputs: dict, base: Path):
    if "driver" in inputs:
        return read_rough_path(base / inputs["driver"])
    spec = p["driver"]
    grid = TimeGrid.uniform(float(p["T"]), int(p["N"]))
    kind = spec.get("kind", "linear")
    if kind == "linear":
        return lift_linear(grid, spec.get("velocity", [1.0]), p["alpha"])
    if kind == "brownian":
        return lift_brownian(int(p["seed"]), int(spec.get("d", 1)), grid,
                             int(spec.get("refinement", 1)), p["alpha"])
    raise ConfigError(f"unknown driver kind {kind!r}; expected 'linear' or 'brownian'")


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _explosion_dict(rep):
    return {"exploded": rep.exploded, "first_index": rep.first_index, "time": rep.time,
            "threshold": rep.threshold, "reason": rep.reason}


# commands; each returns (results, exit_code)

def cmd_lift(p, inputs, out, base):
    if "samples" in inputs:
        t, x = read_samples(base / inputs["samples"])
        grid = TimeGrid.uniform(float(t[-1] - t[0]), int(p["N"]))
        grid = TimeGrid(grid.points + t[0])
        rp = lift_smooth(t, x, grid, p["alpha"])
    else:
        rp = _make_driver(p, {}, base)
    write_rough_path(out / "rough_path.csv", rp)
    n = len(rp.grid)
    gen = np.random.Generator(np.random.PCG64(int(p["seed"]) + 1))
    chen = geom = 0.0
    for _ in range(int(p["checks"])):
        i, u, j = np.sort(gen.integers(0, n, size=3))
        chen = max(chen, chen_defect(rp, int(i), int(u), int(j)))
        geom = max(geom, geometricity_defect(rp, int(i), int(j)))
    res = {"files": ["rough_path.csv", "rough_path.json"], "dimension": rp.dim, "n_points": n,
           "max_chen_defect": chen, "max_geometricity_defect": geom}
    if n <= 4001:
        h = holder_norms(rp)
        res["holder"] = {"x_norm": h.x_norm, "xx_norm": h.xx_norm}
    return res, EXIT_OK


def cmd_solve(p, inputs, out, base):
    rp = _make_driver(p, inputs, base)
    vf = field_from_spec(p["field"])
    traj = solve_rde(vf, rp, p["y0"], with_jacobian=p["with_jacobian"])
    write_trajectory(out / "trajectory.csv", traj)
    res = {"files": ["trajectory.csv", "trajectory.json"], "final_state": traj.states[-1],
           "final_time": traj.times[-1], "blowup_time": traj.blowup_time}
    return res, EXIT_EVENT if traj.blowup_index is not None else EXIT_OK


def cmd_decompose_linear(p, inputs, out, base):
    rp = _make_driver(p, inputs, base)
    A = np.array(p["A"], dtype=float)
    if not p["k"] < A.shape[0]:
        raise ConfigError(f"parameter 'k' must be below the matrix size {A.shape[0]}")
    pair = decompose_blocks(A, BlockPartition(p["k"], A.shape[0] - p["k"]), rp, p["threshold"])
    flow = solve_linear_flow(A, rp)
    write_matrix_path(out / "eta.csv", pair.eta)
    write_matrix_path(out / "psi.csv", pair.psi)
    write_matrix_path(out / "flow.csv", flow)
    res = {"files": ["eta.csv", "psi.csv", "flow.csv"], "recomposition_residual": recompose(pair, flow),
           "explosion": _explosion_dict(pair.explosion),
           "structure_ok": check_linearity_structure(pair)}
    return res, EXIT_EVENT if pair.explosion.exploded else EXIT_OK


def cmd_cascade(p, inputs, out, base):
    rp = _make_driver(p, inputs, base)
    A = np.array(p["A"], dtype=float)
    try:
        cf = cascade_decompose(A, rp, p["threshold"])
    except CascadeExplosion as exc:
        return {"explosion": _explosion_dict(exc.report), "split": exc.split, "message": str(exc)}, EXIT_EVENT
    write_factorization(out, cf)
    flow = solve_linear_flow(A, rp)
    res = {"files": ["factorization.json"] + [f"factor_{i + 1}.csv" for i in range(len(cf.factors))],
           "block_dims": list(cf.basis.block_dims), "recomposition_residual": recompose_cascade(cf, flow),
           "max_factor_entry": max(float(np.max(np.abs(f.matrices))) for f in cf.factors),
           "band_gap": cf.band_gap}
    return res, EXIT_OK


def cmd_factorize(p, inputs, out, base):
    M = np.array(p["M"], dtype=float)
    cf = factor_matrix_with_real_log(M, check_steps=p["check_steps"])
    factors = [f.tolist() for f in cf.final_factors()]
    write_json(out / "factors.json", factors)
    write_factorization(out, cf)
    P = cf.basis.P
    prod = np.linalg.multi_dot([np.eye(M.shape[0])] + cf.final_factors() + [np.eye(M.shape[0])])
    res = {"files": ["factors.json", "factorization.json"], "factors": factors,
           "block_dims": list(cf.basis.block_dims), "P": P,
           "roundtrip_residual": float(np.max(np.abs(prod - P.T @ M @ P))),
           "dynamic_gap": cf.dynamic_gap}
    return res, EXIT_OK


def cmd_grid_decompose(p, inputs, out, base):
    rp = _make_driver(p, inputs, base)
    vf = field_from_spec(p["field"])
    run_ = evolve_decomposition(vf, rp, tuple(p["bounds"]), p["nx"], p["ny"],
                                p["dump_every"] or None, p["margin"], p["threshold"])
    snap = out / "snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    files = []
    for k, (t, e, s, f) in enumerate(zip(run_.times, run_.eta_path, run_.psi_path, run_.phi_path)):
        for name, g in (("eta", e), ("psi", s), ("phi", f)):
            fname = f"{name}_{k:04d}.csv"
            write_diffeo_snapshot(snap / fname, g, t, name)
            files.append(f"snapshots/{fname}")
    rep = verify_planar_decomposition(*run_, margin=p["margin"])
    res = {"files": files, "times": run_.times, "recomposition_residual": rep.recomposition,
           "eta_second_coordinate_drift": rep.eta_drift, "psi_first_coordinate_drift": rep.psi_drift,
           "leaf_residual": rep.leaf_residual, "breakdown_time": run_.breakdown_time,
           "breakdown_reason": run_.breakdown_reason}
    return res, EXIT_EVENT if run_.breakdown_time is not None else EXIT_OK


def _rotation_suite(out: Path):
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    part = BlockPartition(1, 1)
    jobs = []

    rp = lift_linear(TimeGrid.uniform(1.0, 2000), [1.0])
    flow = solve_linear_flow(R, rp)
    err = float(np.max(np.abs(flow.matrices[-1] @ [1.0, 0.0] - [math.cos(1), math.sin(1)])))
    jobs.append({"name": "rotation-flow", "error": err, "tolerance": 1e-4, "passed": err <= 1e-4,
                 "exit_code": EXIT_OK})

    rp = lift_linear(TimeGrid.uniform(0.5, 2000), [1.0])
    pair = decompose_blocks(R, part, rp)
    orc = rotation_oracle([0.5])
    err = float(max(np.max(np.abs(pair.eta.matrices[-1] - orc.eta[0])),
                    np.max(np.abs(pair.psi.matrices[-1] - orc.psi[0]))))
    jobs.append({"name": "closed-forms-at-0.5", "error": err, "tolerance": 1e-4, "passed": err <= 1e-4,
                 "exit_code": EXIT_OK})

    rp = lift_linear(TimeGrid.uniform(1.4, 4000), [1.0])
    pair = decompose_blocks(R, part, rp)
    res = recompose(pair, solve_linear_flow(R, rp))
    write_matrix_path(out / "rotation_eta.csv", pair.eta)
    write_matrix_path(out / "rotation_psi.csv", pair.psi)
    jobs.append({"name": "recomposition", "residual": res, "tolerance": 1e-3,
                 "passed": res <= 1e-3 and not pair.explosion.exploded, "exit_code": EXIT_OK})

    rp = lift_linear(TimeGrid.uniform(2.0, 8000), [1.0])
    pair = decompose_blocks(R, part, rp, 1e6)
    t = pair.explosion.time
    ok = pair.explosion.exploded and abs(t - math.pi / 2) <= 0.05
    jobs.append({"name": "explosion", "explosion": _explosion_dict(pair.explosion),
                 "expected_time": math.pi / 2, "tolerance": 0.05, "passed": ok,
                 "exit_code": EXIT_EVENT if pair.explosion.exploded else EXIT_OK})
    return jobs


SUITES = {"rotation": _rotation_suite}


def cmd_verify(p, inputs, out, base):
    jobs = SUITES[p["suite"]](out)
    passed = all(j["passed"] for j in jobs)
    return {"suite": p["suite"], "jobs": jobs, "all_passed": passed}, EXIT_OK if passed else EXIT_ERROR


HANDLERS = {
    "lift": cmd_lift,
    "solve": cmd_solve,
    "decompose-linear": cmd_decompose_linear,
    "cascade": cmd_cascade,
    "factorize": cmd_factorize,
    "grid-decompose": cmd_grid_decompose,
    "verify": cmd_verify,
}


def run(config: dict, base: Path | None = None, quiet: bool = True) -> int:
    """Execute a resolved config; writes artifacts and ``report.json``; returns the exit code."""
    base = Path.cwd() if base is None else Path(base)
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    p = config["parameters"]
    results, code = HANDLERS[config["command"]](p, config["inputs"], out, base)
    report = {"version": __version__, "command": config["command"], "config": config,
              "results": results, "exit_code": code}
    write_json(out / "report.json", _clean(report))
    if not quiet:
        if config["command"] == "factorize":
            print(json.dumps(_clean(results["factors"])))
        else:
            summary = {k: v for k, v in results.items() if k not in ("files", "jobs", "times")}
            print(json.dumps(_clean(summary), sort_keys=True))
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roughflow", description="Rough-path flows and their decompositions.")
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="job to run (may also come from the config)")
    ap.add_argument("--config", help="JSON job config")
    ap.add_argument("--output", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="random seed (overrides parameters.seed)")
    ap.add_argument("--quiet", action="store_true", help="print nothing on success")
    ap.add_argument("--param", action="append", metavar="KEY=VALUE",
                    help="override a parameter; VALUE is parsed as JSON, dotted keys reach nested objects")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        cfg, text, source = {}, None, None
        if args.config:
            cfg, text = load_config(args.config)
            source = args.config
        config = resolve_config(args, cfg, text, source)
        base = Path(source).parent if source else Path.cwd()
        return run(config, base, quiet=args.quiet)
    except ConfigError as exc:
        print(f"roughflow: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report and exit with status 1
        print(f"roughflow: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

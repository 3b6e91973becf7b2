"""CSV/JSON readers and writers for paths, trajectories and factorizations.

Floats are written with ``repr`` (shortest round-trip form), so equal
arrays always produce identical bytes.  Every CSV has a JSON sidecar with
the same stem holding metadata that does not fit in columns.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .jordan_cascade import CascadeFactorization, RealBlockBasis
from .linear_decomp import LinearFlowPath
from .rde_solver import TrajectoryPath
from .rough_core import RoughPathGrid, TimeGrid
from .rough_integral import ControlledPathGrid
from .grid_decomp import DiffeoGrid

__all__ = [
    "write_json",
    "read_json",
    "sidecar_path",
    "write_rough_path",
    "read_rough_path",
    "write_controlled_path",
    "read_controlled_path",
    "write_trajectory",
    "read_trajectory",
    "write_matrix_path",
    "read_matrix_path",
    "write_diffeo_snapshot",
    "read_diffeo_snapshot",
    "write_factorization",
    "read_factorization",
    "write_samples",
    "read_samples",
]


def _fmt(x) -> str:
    return repr(float(x))


def _idx(*ix: int) -> str:
    """1-based index suffix; digits are concatenated when all are single-digit."""
    parts = [str(i + 1) for i in ix]
    return "".join(parts) if all(len(p) == 1 for p in parts) else "_".join(parts)


def _write_rows(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _read_rows(path: Path) -> tuple:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r if row]
    return header, rows


def _to_array(rows, cols=None) -> np.ndarray:
    sel = rows if cols is None else [[row[c] for c in cols] for row in rows]
    return np.array([[float(v) for v in row] for row in sel], dtype=float)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


# rough paths


def write_rough_path(path, rp: RoughPathGrid) -> None:
    path = Path(path)
    d = rp.dim
    header = ["t"] + [f"X_{_idx(i)}" for i in range(d)]
    header += [f"XX_{_idx(i, j)}" for i in range(d) for j in range(d)]
    rows = []
    n = len(rp.grid)
    for k in range(n):
        row = [_fmt(rp.grid.points[k])] + [_fmt(v) for v in rp.X[k]]
        row += [_fmt(v) for v in rp.XX_step[k].ravel()] if k < n - 1 else [""] * (d * d)
        rows.append(row)
    _write_rows(path, header, rows)
    write_json(sidecar_path(path), {"kind": "rough_path", "alpha": rp.alpha, "d": d, "n_points": n})


def read_rough_path(path) -> RoughPathGrid:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    d = int(meta["d"])
    header, rows = _read_rows(path)
    if len(header) != 1 + d + d * d:
        raise ValueError(f"{path}: expected {1 + d + d * d} columns for d={d}, got {len(header)}")
    t = _to_array(rows, [0])[:, 0]
    X = _to_array(rows, range(1, 1 + d))
    XX = _to_array(rows[:-1], range(1 + d, 1 + d + d * d)).reshape(-1, d, d)
    return RoughPathGrid(TimeGrid(t), X, XX, float(meta["alpha"]))


# controlled paths


def write_controlled_path(path, cp: ControlledPathGrid, base_file) -> None:
    path = Path(path)
    n, d = len(cp.base.grid), cp.base.dim
    Y = cp.Y.reshape(n, -1)
    Yp = cp.Yp.reshape(n, Y.shape[1], d)
    ell = Y.shape[1]
    header = ["t"] + [f"Y_{_idx(i)}" for i in range(ell)]
    header += [f"Yp_{_idx(i, j)}" for i in range(ell) for j in range(d)]
    rows = [
        [_fmt(cp.base.grid.points[k])] + [_fmt(v) for v in Y[k]] + [_fmt(v) for v in Yp[k].ravel()]
        for k in range(n)
    ]
    _write_rows(path, header, rows)
    write_json(sidecar_path(path), {
        "kind": "controlled_path",
        "base": Path(base_file).name,
        "value_shape": list(cp.value_shape),
    })


def read_controlled_path(path) -> ControlledPathGrid:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    base = read_rough_path(path.parent / meta["base"])
    shape = tuple(meta["value_shape"])
    ell = int(np.prod(shape))
    d = base.dim
    _, rows = _read_rows(path)
    Y = _to_array(rows, range(1, 1 + ell)).reshape((-1,) + shape)
    Yp = _to_array(rows, range(1 + ell, 1 + ell + ell * d)).reshape((-1,) + shape + (d,))
    return ControlledPathGrid(base, Y, Yp)


# trajectories


def write_trajectory(path, traj: TrajectoryPath) -> None:
    path = Path(path)
    S = traj.states
    if S.ndim != 2:
        raise ValueError("only single-trajectory paths (states of shape (n, m)) serialize to CSV")
    n, m = S.shape
    header = ["t"] + [f"y_{_idx(i)}" for i in range(m)]
    if traj.jacobians is not None:
        header += [f"J_{_idx(i, j)}" for i in range(m) for j in range(m)]
    rows = []
    for k in range(n):
        row = [_fmt(traj.grid.points[k])] + [_fmt(v) for v in S[k]]
        if traj.jacobians is not None:
            row += [_fmt(v) for v in traj.jacobians[k].ravel()]
        rows.append(row)
    _write_rows(path, header, rows)
    write_json(sidecar_path(path), {
        "kind": "trajectory",
        "m": m,
        "has_jacobian": traj.jacobians is not None,
        "grid": [_fmt(t) for t in traj.grid.points] if n < len(traj.grid) else None,
        "blowup_index": traj.blowup_index,
    })


def read_trajectory(path) -> TrajectoryPath:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    m = int(meta["m"])
    _, rows = _read_rows(path)
    t = _to_array(rows, [0])[:, 0]
    if meta.get("grid"):
        t = np.array([float(v) for v in meta["grid"]])
    S = _to_array(rows, range(1, 1 + m))
    J = _to_array(rows, range(1 + m, 1 + m + m * m)).reshape(-1, m, m) if meta["has_jacobian"] else None
    return TrajectoryPath(TimeGrid(t), S, J, meta.get("blowup_index"))


# matrix paths


def write_matrix_path(path, lfp: LinearFlowPath) -> None:
    path = Path(path)
    m = lfp.m
    header = ["t"] + [f"m_{_idx(i, j)}" for i in range(m) for j in range(m)]
    rows = [
        [_fmt(t)] + [_fmt(v) for v in M.ravel()] for t, M in zip(lfp.times, lfp.matrices)
    ]
    _write_rows(path, header, rows)
    write_json(sidecar_path(path), {
        "kind": "matrix_path",
        "m": m,
        "blowup_index": lfp.blowup_index,
        "grid": [_fmt(t) for t in lfp.grid.points] if len(lfp.times) < len(lfp.grid) else None,
    })


def read_matrix_path(path) -> LinearFlowPath:
    path = Path(path)
    meta = read_json(sidecar_path(path))
    m = int(meta["m"])
    _, rows = _read_rows(path)
    t = _to_array(rows, [0])[:, 0]
    if meta.get("grid"):
        t = np.array([float(v) for v in meta["grid"]])
    M = _to_array(rows, range(1, 1 + m * m)).reshape(-1, m, m)
    return LinearFlowPath(TimeGrid(t), M, meta.get("blowup_index"))


# diffeomorphism snapshots


def write_diffeo_snapshot(path, grid: DiffeoGrid, time: float, name: str = "eta") -> None:
    path = Path(path)
    X = grid.points.reshape(-1, 2)
    V = grid.values.reshape(-1, 2)
    rows = [[_fmt(x[0]), _fmt(x[1]), _fmt(v[0]), _fmt(v[1])] for x, v in zip(X, V)]
    _write_rows(path, ["x1", "x2", f"{name}1", f"{name}2"], rows)
    write_json(sidecar_path(path), {
        "kind": "diffeo_snapshot",
        "name": name,
        "time": float(time),
        "bounds": list(grid.bounds),
        "nx": grid.nx,
        "ny": grid.ny,
    })


def read_diffeo_snapshot(path) -> tuple:
    """Returns ``(grid, time)``."""
    path = Path(path)
    meta = read_json(sidecar_path(path))
    _, rows = _read_rows(path)
    V = _to_array(rows, [2, 3]).reshape(int(meta["nx"]), int(meta["ny"]), 2)
    return DiffeoGrid(tuple(meta["bounds"]), int(meta["nx"]), int(meta["ny"]), V), float(meta["time"])


# factorizations


def write_factorization(directory, cf: CascadeFactorization, stem: str = "factor") -> Path:
    """Factor CSVs plus ``factorization.json`` referencing them; returns the JSON path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    refs = []
    for i, f in enumerate(cf.factors):
        name = f"{stem}_{i + 1}.csv"
        write_matrix_path(directory / name, f)
        refs.append(name)
    doc = {
        "P": cf.basis.P.tolist(),
        "T": cf.basis.T.tolist(),
        "block_dims": list(cf.basis.block_dims),
        "factors": refs,
    }
    if cf.log_matrix is not None:
        doc["log_matrix"] = cf.log_matrix.tolist()
    out = directory / "factorization.json"
    write_json(out, doc)
    return out


def read_factorization(path) -> CascadeFactorization:
    path = Path(path)
    doc = read_json(path)
    basis = RealBlockBasis(np.array(doc["P"]), tuple(doc["block_dims"]), np.array(doc["T"]))
    factors = tuple(read_matrix_path(path.parent / ref) for ref in doc["factors"])
    log = np.array(doc["log_matrix"]) if "log_matrix" in doc else None
    return CascadeFactorization(basis, factors, factors[0].grid, log_matrix=log)


# raw samples (input to smooth lifts)


def write_samples(path, times, values) -> None:
    values = np.asarray(values, dtype=float).reshape(len(times), -1)
    header = ["t"] + [f"x_{_idx(i)}" for i in range(values.shape[1])]
    _write_rows(Path(path), header, [[_fmt(t)] + [_fmt(v) for v in row] for t, row in zip(times, values)])


def read_samples(path) -> tuple:
    _, rows = _read_rows(Path(path))
    arr = _to_array(rows)
    return arr[:, 0], arr[:, 1:]

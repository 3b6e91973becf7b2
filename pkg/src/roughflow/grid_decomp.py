"""Planar flow decomposition ``phi_t = eta_t o psi_t`` on a rectangular grid.

The foliations are Cartesian: ``eta`` moves points along horizontal lines
(it keeps the second coordinate) and ``psi`` moves them along vertical
lines.  Writing ``F(y) = a(y) e1 + b(y) D eta(eta^{-1} y) e2`` and
evaluating at ``y = eta(x)`` gives the method-of-lines equation::

    d eta_1(x) = [F_1(eta(x)) - F_2(eta(x)) d_{x2} eta_1(x)] dX

which is stepped on the grid with a second-order term from a directional
finite difference.  ``phi`` is stepped per grid point and ``psi`` is
recovered as ``eta^{-1} o phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .rde_solver import StepFailure, VectorFieldSet, step_davie
from .rough_core import RoughPathGrid

__all__ = [
    "DiffeoGrid",
    "PlanarFoliationPair",
    "TransversalityError",
    "GridDecomposition",
    "PlanarReport",
    "split_vector_field",
    "evolve_decomposition",
    "invert_horizontal_diffeo",
    "verify_planar_decomposition",
    "interior_mask",
    "DET_TOL",
    "H_FD_REL_STEP",
]

DET_TOL = 1e-8
H_FD_REL_STEP = 1e-5
DEFAULT_MARGIN = 0.2
DEFAULT_THRESHOLD = 1e6


class TransversalityError(ArithmeticError):
    """The horizontal factor stopped being a diffeomorphism transversal to the vertical leaves."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class PlanarFoliationPair:
    """Horizontal leaves (span e1) for ``eta`` and vertical leaves (span e2) for ``psi``."""

    horizontal: tuple = (1.0, 0.0)
    vertical: tuple = (0.0, 1.0)


@dataclass(frozen=True, eq=False)
class DiffeoGrid:
    """Samples ``values[i, j] = g(x1_i, x2_j)`` of a planar map on a rectangle.

    ``bounds = (x1_min, x1_max, x2_min, x2_max)``.  Evaluation is bilinear;
    entries may be NaN where the map is undefined (for ``psi`` this marks
    points whose image left the rectangle).
    """

    bounds: tuple
    nx: int
    ny: int
    values: np.ndarray

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 4 or not (b[0] < b[1] and b[2] < b[3]):
            raise ValueError(f"bounds must be (x1_min, x1_max, x2_min, x2_max) with min < max, got {b}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("need at least two samples per axis")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.nx, self.ny, 2):
            raise ValueError(f"values must have shape ({self.nx}, {self.ny}, 2), got {v.shape}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls, bounds, nx: int, ny: int) -> "DiffeoGrid":
        x1 = np.linspace(bounds[0], bounds[1], nx)
        x2 = np.linspace(bounds[2], bounds[3], ny)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        return cls(bounds, nx, ny, np.stack([X1, X2], axis=-1))

    @classmethod
    def from_function(cls, g, bounds, nx: int, ny: int) -> "DiffeoGrid":
        base = cls.identity(bounds, nx, ny)
        return cls(bounds, nx, ny, np.asarray(g(base.values), dtype=float))

    @property
    def axes(self) -> tuple:
        b = self.bounds
        return np.linspace(b[0], b[1], self.nx), np.linspace(b[2], b[3], self.ny)

    @property
    def points(self) -> np.ndarray:
        return DiffeoGrid.identity(self.bounds, self.nx, self.ny).values

    @property
    def width(self) -> float:
        return self.bounds[1] - self.bounds[0]

    def __call__(self, pts) -> np.ndarray:
        """Bilinear evaluation; NaN outside the rectangle."""
        pts = np.asarray(pts, dtype=float)
        itp = RegularGridInterpolator(self.axes, self.values, bounds_error=False, fill_value=np.nan)
        return itp(pts.reshape(-1, 2)).reshape(pts.shape[:-1] + (2,))

    def jacobian(self) -> np.ndarray:
        """Central differences (one-sided at the boundary), shape ``(nx, ny, 2, 2)``."""
        x1, x2 = self.axes
        d1 = np.gradient(self.values, x1, axis=0)
        d2 = np.gradient(self.values, x2, axis=1)
        return np.stack([d1, d2], axis=-1)

    def jacobian_at(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        J = self.jacobian().reshape(self.nx, self.ny, 4)
        itp = RegularGridInterpolator(self.axes, J, bounds_error=False, fill_value=np.nan)
        return itp(pts.reshape(-1, 2)).reshape(pts.shape[:-1] + (2, 2))


def interior_mask(grid: DiffeoGrid, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Grid points inside the rectangle shrunk by ``margin`` of its size on each side."""
    b = grid.bounds
    X = grid.points
    w1, w2 = b[1] - b[0], b[3] - b[2]
    return (
        (X[..., 0] >= b[0] + margin * w1 - 1e-12) & (X[..., 0] <= b[1] - margin * w1 + 1e-12)
        & (X[..., 1] >= b[2] + margin * w2 - 1e-12) & (X[..., 1] <= b[3] - margin * w2 + 1e-12)
    )


def _check_monotone_rows(E1: np.ndarray, time: float | None = None) -> None:
    if not np.all(np.diff(E1, axis=0) > 0):
        raise TransversalityError(
            "eta_1 is not strictly increasing along x1: eta stopped being a diffeomorphism of the "
            "horizontal leaves (transversality lost)",
            time,
        )


def _invert_rows(eta: DiffeoGrid, pts: np.ndarray) -> np.ndarray:
    """Row-wise inverse of ``eta_1``; NaN where the target is outside the row's range."""
    x1, x2 = eta.axes
    E = eta.values[..., 0]
    p = pts.reshape(-1, 2)
    j = np.clip(np.searchsorted(x2, p[:, 1], side="right") - 1, 0, eta.ny - 2)
    w = (p[:, 1] - x2[j]) / (x2[j + 1] - x2[j])
    rows = (1.0 - w)[:, None] * E[:, j].T + w[:, None] * E[:, j + 1].T  # (npts, nx)
    # rows are increasing, so counting entries below the target locates the cell
    i = np.clip(np.sum(rows < p[:, :1], axis=1) - 1, 0, eta.nx - 2)
    idx = np.arange(p.shape[0])
    r0, r1 = rows[idx, i], rows[idx, i + 1]
    s = (p[:, 0] - r0) / (r1 - r0)
    out = np.empty_like(p)
    out[:, 0] = x1[i] + s * (x1[i + 1] - x1[i])
    out[:, 1] = p[:, 1]
    outside = (
        (p[:, 1] < x2[0]) | (p[:, 1] > x2[-1])
        | (p[:, 0] < rows[:, 0]) | (p[:, 0] > rows[:, -1])
        | ~np.isfinite(p).all(axis=1)
    )
    out[outside] = np.nan
    return out.reshape(pts.shape)


def invert_horizontal_diffeo(eta: DiffeoGrid, point, strict: bool = True) -> np.ndarray:
    """``eta^{-1}(point)`` for ``eta(x1, x2) = (eta_1(x1, x2), x2)``.

    On the bilinear row at height ``x2`` the map is piecewise linear and
    increasing, so the containing cell is located by search and the
    preimage solved exactly inside it (well below ``1e-10`` of the width).
    Accepts a single point or an array of points.  With ``strict`` a point
    outside the image raises ``ValueError``; otherwise NaN is returned.
    """
    if not np.array_equal(eta.values[..., 1], eta.points[..., 1]):
        raise ValueError("eta must keep the second coordinate")
    _check_monotone_rows(eta.values[..., 0])
    pts = np.asarray(point, dtype=float)
    out = _invert_rows(eta, pts)
    if strict and np.isnan(out).any():
        raise ValueError("point(s) outside the image of the rectangle under eta")
    return out


def split_vector_field(
    vf: VectorFieldSet, eta: DiffeoGrid, x, driver_component: int = 0
) -> tuple:
    """Split ``F(x) e_c = a e1 + b D eta(eta^{-1} x) e2``.

    Returns ``(h, b)`` with ``h = a e1`` as a vector and ``b`` the
    coefficient along the transported vertical direction.
    """
    if vf.m != 2:
        raise ValueError("split_vector_field is planar: vf.m must be 2")
    x = np.asarray(x, dtype=float)
    y = invert_horizontal_diffeo(eta, x)
    w = eta.jacobian_at(y)[..., :, 1]
    M = np.stack([np.broadcast_to([1.0, 0.0], w.shape), w], axis=-1)
    det = np.linalg.det(M)
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) < DET_TOL):
        raise TransversalityError(
            "transported vertical direction is (nearly) horizontal: transversality condition fails"
        )
    rhs = np.asarray(vf.F(x))[..., :, driver_component]
    ab = np.linalg.solve(M, rhs[..., None])[..., 0]
    h = np.zeros_like(ab)
    h[..., 0] = ab[..., 0]
    return h, ab[..., 1]


@dataclass(frozen=True, eq=False)
class GridDecomposition:
    """Dumped snapshots of ``eta``, ``psi`` and ``phi`` at ``times``.

    ``breakdown_time`` (with ``breakdown_reason``) is set when stepping
    stopped early; the paths then end at the last good step.
    """

    eta_path: list
    psi_path: list
    phi_path: list
    times: np.ndarray
    margin: float = DEFAULT_MARGIN
    breakdown_time: float | None = None
    breakdown_reason: str = ""

    def __iter__(self):
        return iter((self.eta_path, self.psi_path, self.phi_path))


@dataclass(frozen=True)
class PlanarReport:
    """Interior residuals: ``recomposition`` = ``|eta(psi(x)) - phi(x)|``,
    ``eta_drift`` = ``|eta_2(x) - x2|``, ``psi_drift`` = ``|psi_1(x) - x1|``,
    ``leaf_residual`` = ``|eta(x1, phi_2(x)) - phi(x)|``."""

    recomposition: float
    eta_drift: float
    psi_drift: float
    leaf_residual: float
    per_time: dict = field(default_factory=dict)


def _h_field(vf, E, X2, dx2, comp):
    Y = np.stack([E, X2], axis=-1)
    Fv = np.asarray(vf.F(Y))[..., :, comp]
    dE = np.gradient(E, dx2, axis=1, edge_order=2)
    return Fv[..., 0] - Fv[..., 1] * dE


def _psi_from(eta: DiffeoGrid, phi_values: np.ndarray) -> DiffeoGrid:
    return DiffeoGrid(eta.bounds, eta.nx, eta.ny, _invert_rows(eta, phi_values))


def evolve_decomposition(
    vf: VectorFieldSet,
    rp: RoughPathGrid,
    bounds=(-2.0, 2.0, -2.0, 2.0),
    nx: int = 101,
    ny: int = 101,
    dump_every: int | None = None,
    margin: float = DEFAULT_MARGIN,
    threshold: float = DEFAULT_THRESHOLD,
) -> GridDecomposition:
    """Evolve ``eta`` on the grid, ``phi`` per grid point, and recover ``psi``.

    Snapshots are kept every ``dump_every`` steps (default: only the start
    and the end).  Stepping stops, recording the time and reason, when
    ``eta_1`` loses monotonicity along ``x1`` or exceeds ``threshold``, when
    a step produces non-finite values, or when ``phi`` carries an interior
    point out of the rectangle.
    """
    if rp.dim != 1:
        raise ValueError("evolve_decomposition needs a scalar driver")
    if vf.m != 2 or vf.d != 1:
        raise ValueError("evolve_decomposition needs a planar field with one driving direction")
    ident = DiffeoGrid.identity(bounds, nx, ny)
    X = ident.points
    X2 = X[..., 1]
    dx2 = ident.axes[1]
    inner = interior_mask(ident, margin)
    b = ident.bounds

    E = X[..., 0].copy()
    P = X.copy()
    dX = rp.increments[:, 0]
    XX = rp.XX_step[:, 0, 0]
    t = rp.grid.points
    n_steps = rp.n_steps
    every = n_steps if not dump_every else int(dump_every)

    def snapshot(E, P):
        eta = DiffeoGrid(b, nx, ny, np.stack([E, X2], axis=-1))
        phi = DiffeoGrid(b, nx, ny, P)
        return eta, _psi_from(eta, P), phi

    snaps = [snapshot(E, P)]
    times = [t[0]]
    reason, when = "", None
    for k in range(n_steps):
        H = _h_field(vf, E, X2, dx2, 0)
        hmax = np.max(np.abs(H))
        if hmax > 0:
            eps = H_FD_REL_STEP * max(1.0, float(np.max(np.abs(E)))) / hmax
            DH = (_h_field(vf, E + eps * H, X2, dx2, 0) - _h_field(vf, E - eps * H, X2, dx2, 0)) / (2 * eps)
        else:
            DH = np.zeros_like(E)
        E_new = E + H * dX[k] + DH * XX[k]
        try:
            P_new = step_davie(P, vf, rp.increments[k], rp.XX_step[k], t=t[k + 1])
        except StepFailure:
            reason, when = "phi step failed", t[k + 1]
            break
        if not np.all(np.isfinite(E_new)) or np.max(np.abs(E_new)) > threshold:
            reason, when = "eta exploded", t[k + 1]
            break
        try:
            _check_monotone_rows(E_new, t[k + 1])
        except TransversalityError as exc:
            reason, when = str(exc), t[k + 1]
            break
        Pi = P_new[inner]
        if np.any((Pi[:, 0] < b[0]) | (Pi[:, 0] > b[1]) | (Pi[:, 1] < b[2]) | (Pi[:, 1] > b[3])):
            reason, when = "phi carried an interior point out of the rectangle", t[k + 1]
            break
        E, P = E_new, P_new
        if (k + 1) % every == 0 or k + 1 == n_steps:
            snaps.append(snapshot(E, P))
            times.append(t[k + 1])
    if reason and times[-1] != t[k]:
        snaps.append(snapshot(E, P))
        times.append(t[k])

    eta_path, psi_path, phi_path = (list(s) for s in zip(*snaps))
    return GridDecomposition(
        eta_path, psi_path, phi_path, np.array(times), margin,
        None if when is None else float(when), reason,
    )


def verify_planar_decomposition(
    eta_path, psi_path, phi_path, margin: float = DEFAULT_MARGIN
) -> PlanarReport:
    """Max over snapshots and interior grid points of the four residuals in :class:`PlanarReport`."""
    if not (len(eta_path) == len(psi_path) == len(phi_path)):
        raise ValueError("paths must have the same number of snapshots")
    worst = np.zeros(4)
    per_time = {"recomposition": [], "eta_drift": [], "psi_drift": [], "leaf_residual": []}
    for eta, psi, phi in zip(eta_path, psi_path, phi_path):
        if not (eta.bounds == psi.bounds == phi.bounds and eta.values.shape == psi.values.shape == phi.values.shape):
            raise ValueError("inconsistent grids")
        inner = interior_mask(eta, margin)
        X = eta.points
        phi_v = phi.values[inner]
        psi_v = psi.values[inner]
        a = np.linalg.norm(eta(psi_v) - phi_v, axis=-1)
        bdrift = np.abs(eta.values[..., 1] - X[..., 1])[inner]
        c = np.abs(psi_v[:, 0] - X[inner][:, 0])
        leaf_pts = np.stack([X[inner][:, 0], phi_v[:, 1]], axis=-1)
        leaf = np.linalg.norm(eta(leaf_pts) - phi_v, axis=-1)
        vals = [float(np.max(v, initial=0.0)) if np.all(np.isfinite(v)) else np.inf for v in (a, bdrift, c, leaf)]
        for key, v in zip(per_time, vals):
            per_time[key].append(v)
        worst = np.maximum(worst, vals)
    return PlanarReport(*(float(w) for w in worst), per_time=per_time)

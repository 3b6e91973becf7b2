"""Level-2 rough paths sampled on a time grid.

A rough path is stored as its first level ``X`` at every grid point plus the
second level ``XX`` only for adjacent grid cells.  Every other second-level
increment is rebuilt by Chen composition, so the Chen relation holds by
construction rather than up to a tolerance.

Convention: ``XX[i, j]`` approximates the iterated integral
``int X^i_{s r} dX^j_r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALPHA_MIN = 1.0 / 3.0
ALPHA_MAX = 0.5

__all__ = [
    "TimeGrid",
    "RoughPathGrid",
    "HolderEstimate",
    "second_level_lookup",
    "chen_defect",
    "geometricity_defect",
    "lift_smooth",
    "lift_linear",
    "lift_brownian",
    "box_muller_normals",
    "holder_norms",
    "restrict",
    "refine_grid",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing sample times on ``[0, T]`` starting at 0."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a time grid needs at least 2 points")
        if pts[0] != 0.0:
            raise ValueError(f"a time grid must start at 0, got {pts[0]!r}")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be finite and strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1 or not T > 0:
            raise ValueError("need n_steps >= 1 and T > 0")
        return cls(np.linspace(0.0, T, n_steps + 1))

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True, eq=False)
class RoughPathGrid:
    """A sampled alpha-Holder rough path ``(X, XX)`` over a :class:`TimeGrid`.

    Attributes
    ----------
    grid
        Sample times.
    X
        First level, shape ``(n_points, d)``.
    XX_step
        Second level of each adjacent cell ``[t_i, t_{i+1}]``, shape
        ``(n_points - 1, d, d)``.
    alpha
        Holder exponent in ``(1/3, 1/2]``.  Metadata only: it enters the norm
        estimates and error reports, never the arithmetic.
    """

    grid: TimeGrid
    X: np.ndarray
    XX_step: np.ndarray
    alpha: float = 0.5

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X[:, None])
        XX = _frozen(self.XX_step)
        n = len(self.grid)
        if X.ndim != 2 or X.shape[0] != n:
            raise ValueError(f"X must have shape ({n}, d), got {X.shape}")
        d = X.shape[1]
        if XX.shape != (n - 1, d, d):
            raise ValueError(f"XX_step must have shape ({n - 1}, {d}, {d}), got {XX.shape}")
        if not ALPHA_MIN < self.alpha <= ALPHA_MAX:
            raise ValueError(f"alpha must lie in (1/3, 1/2], got {self.alpha}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "XX_step", XX)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def increments(self) -> np.ndarray:
        """First-level increments of the adjacent cells, shape ``(n_steps, d)``."""
        return np.diff(self.X, axis=0)


@dataclass(frozen=True)
class HolderEstimate:
    x_norm: float
    xx_norm: float


def _check_indices(rp: RoughPathGrid, *idx: int) -> None:
    n = len(rp.grid)
    for k in idx:
        if not 0 <= k < n:
            raise IndexError(f"grid index {k} out of range [0, {n - 1}]")
    if list(idx) != sorted(idx):
        raise IndexError(f"grid indices must be non-decreasing, got {idx}")


def second_level_lookup(rp: RoughPathGrid, i: int, j: int) -> np.ndarray:
    """Second level ``XX_{t_i t_j}`` obtained by Chen composition of the stored cells."""
    _check_indices(rp, i, j)
    # sum over cells k of XX_k + X_{t_i t_k} (x) X_{t_k t_k+1}
    X = rp.X[i:j + 1]
    return rp.XX_step[i:j].sum(axis=0) + np.einsum("ka,kb->ab", X[:-1] - X[0], np.diff(X, axis=0))


def chen_defect(rp: RoughPathGrid, i: int, u: int, j: int) -> float:
    """Frobenius norm of ``XX_ij - XX_iu - XX_uj - X_iu (x) X_uj``."""
    _check_indices(rp, i, u, j)
    lhs = second_level_lookup(rp, i, j)
    rhs = (
        second_level_lookup(rp, i, u)
        + second_level_lookup(rp, u, j)
        + np.outer(rp.X[u] - rp.X[i], rp.X[j] - rp.X[u])
    )
    return float(np.linalg.norm(lhs - rhs))


def geometricity_defect(rp: RoughPathGrid, i: int, j: int) -> float:
    """Frobenius norm of ``X_ij (x) X_ij - 2 Sym(XX_ij)``."""
    _check_indices(rp, i, j)
    XX = second_level_lookup(rp, i, j)
    inc = rp.X[j] - rp.X[i]
    return float(np.linalg.norm(np.outer(inc, inc) - (XX + XX.T)))


def refine_grid(grid: TimeGrid, factor: int) -> np.ndarray:
    """Times of ``grid`` with every cell split into ``factor`` equal sub-cells.

    The coarse points are reproduced bitwise.
    """
    if factor < 1:
        raise ValueError("refinement factor must be >= 1")
    p = grid.points
    frac = np.arange(factor) / factor
    fine = (p[:-1, None] + frac[None, :] * np.diff(p)[:, None]).ravel()
    return np.append(fine, p[-1])


def lift_smooth(
    fine_times, fine_values, coarse: TimeGrid, alpha: float = 0.5
) -> RoughPathGrid:
    """Lift a finely sampled path to a rough path on ``coarse``.

    Each coarse cell's second level is the trapezoid approximation of
    ``int X_{s r} (x) dX_r`` over the fine sub-steps inside that cell.  The
    symmetric part of every cell is then exactly ``X_st (x) X_st / 2``.

    Raises
    ------
    ValueError
        If the fine times do not contain every coarse point, or the samples
        have inconsistent shapes.
    """
    t = np.asarray(fine_times, dtype=float)
    x = np.asarray(fine_values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if t.ndim != 1 or x.ndim != 2 or x.shape[0] != t.size:
        raise ValueError(
            f"fine samples must be (n,) times and (n, d) values, got {t.shape} and {x.shape}"
        )
    if np.any(np.diff(t) <= 0):
        raise ValueError("fine times must be strictly increasing")
    cp = coarse.points
    idx = np.searchsorted(t, cp)
    scale = max(1.0, abs(coarse.T))
    bad = (idx >= t.size) | (np.abs(t[np.minimum(idx, t.size - 1)] - cp) > 1e-12 * scale)
    if np.any(bad):
        raise ValueError("fine grid is not a refinement of the coarse grid")
    if idx[0] != 0 or idx[-1] != t.size - 1:
        raise ValueError("fine grid must span exactly the coarse interval")

    # cell id of every fine sub-step
    owner = np.repeat(np.arange(coarse.n_steps), np.diff(idx))
    anchor = x[idx[:-1]][owner]
    a0 = x[:-1] - anchor
    a1 = x[1:] - anchor
    terms = np.einsum("ki,kj->kij", 0.5 * (a0 + a1), x[1:] - x[:-1])
    XX = np.add.reduceat(terms, idx[:-1], axis=0)
    return RoughPathGrid(coarse, x[idx], XX, alpha)


def lift_linear(grid: TimeGrid, velocity, alpha: float = 0.5) -> RoughPathGrid:
    """Exact canonical lift of ``X_t = t * velocity``."""
    v = np.atleast_1d(np.asarray(velocity, dtype=float))
    X = grid.points[:, None] * v[None, :]
    dt = np.diff(grid.points)
    XX = 0.5 * dt[:, None, None] ** 2 * np.outer(v, v)[None]
    return RoughPathGrid(grid, X, XX, alpha)


def box_muller_normals(seed: int, size: int) -> np.ndarray:
    """``size`` standard normals from PCG64(seed) uniforms via Box-Muller.

    The stream is fixed: uniform pairs ``(u1, u2)`` are drawn with
    ``Generator(PCG64(seed)).random``, ``u1`` is mapped to ``(0, 1]`` and each
    pair yields ``r cos(theta), r sin(theta)`` interleaved.
    """
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    n_pairs = (size + 1) // 2
    gen = np.random.Generator(np.random.PCG64(seed))
    u = gen.random((n_pairs, 2))
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty((n_pairs, 2))
    z[:, 0] = r * np.cos(theta)
    z[:, 1] = r * np.sin(theta)
    return z.ravel()[:size]


def lift_brownian(
    seed: int, d: int, grid: TimeGrid, refinement: int = 1, alpha: float = 0.5
) -> RoughPathGrid:
    """Stratonovich lift of a d-dimensional Brownian sample path.

    The path is simulated on ``grid`` refined ``refinement`` times and lifted
    with the trapezoid rule of :func:`lift_smooth`.  Output is a pure
    function of the arguments.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    fine = refine_grid(grid, refinement)
    dt = np.diff(fine)
    z = box_muller_normals(seed, dt.size * d).reshape(dt.size, d)
    path = np.vstack([np.zeros((1, d)), np.cumsum(z * np.sqrt(dt)[:, None], axis=0)])
    return lift_smooth(fine, path, grid, alpha)


def _second_level_from(rp: RoughPathGrid, i: int) -> np.ndarray:
    """All ``XX_{t_i t_j}`` for ``j >= i`` at once, shape ``(n - i, d, d)``."""
    X = rp.X[i:] - rp.X[i]
    steps = rp.XX_step[i:] + np.einsum("ka,kb->kab", X[:-1], np.diff(X, axis=0))
    out = np.zeros((X.shape[0], rp.dim, rp.dim))
    np.cumsum(steps, axis=0, out=out[1:])
    return out


def holder_norms(rp: RoughPathGrid) -> HolderEstimate:
    """Grid estimates of ``|X|_alpha`` and ``|XX|_{2 alpha}`` over all pairs."""
    t = rp.grid.points
    a = rp.alpha
    x_norm = 0.0
    xx_norm = 0.0
    for i in range(len(t) - 1):
        dt = t[i + 1:] - t[i]
        dx = np.linalg.norm(rp.X[i + 1:] - rp.X[i], axis=1)
        x_norm = max(x_norm, float(np.max(dx / dt**a)))
        dxx = np.linalg.norm(_second_level_from(rp, i)[1:], axis=(1, 2))
        xx_norm = max(xx_norm, float(np.max(dxx / dt ** (2 * a))))
    return HolderEstimate(x_norm, xx_norm)


def restrict(rp: RoughPathGrid, i: int, j: int) -> RoughPathGrid:
    """The rough path on ``[t_i, t_j]``, re-based to start at time 0.

    First-level values and cell tensors are copied unchanged, so solvers
    restarted on the restriction reproduce the same floating-point steps.
    """
    _check_indices(rp, i, j)
    if j == i:
        raise IndexError("restriction needs at least one cell")
    pts = rp.grid.points[i:j + 1] - rp.grid.points[i]
    return RoughPathGrid(TimeGrid(pts), rp.X[i:j + 1], rp.XX_step[i:j], rp.alpha)

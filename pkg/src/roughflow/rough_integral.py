"""Controlled paths and compensated-sum rough integrals.

Index conventions.  A controlled path ``Y`` has values of any shape ``S``
per grid point and a Gubinelli derivative of shape ``S + (d,)`` whose last
axis is the driving direction.  An integrand against ``dX`` must have
``S = S' + (d,)`` (a linear map ``R^d -> R^{S'}``), and the compensated cell
term is::

    Y_u X_uv + sum_{b,c} Y'_u[..., b, c] XX_uv[c, b]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rough_core import RoughPathGrid, holder_norms, restrict, second_level_lookup

__all__ = [
    "ControlledPathGrid",
    "LocalErrorReport",
    "remainder",
    "controlled_from_function",
    "integrate_against_rough",
    "integrate_against_controlled",
    "cumulative_rough_integral",
    "cumulative_controlled_integral",
    "local_error_report",
    "finite_difference_jacobian",
    "COMPENSATED_THRESHOLD",
]

# sums with more terms than this are accumulated in extended precision
COMPENSATED_THRESHOLD = 10_000


@dataclass(frozen=True, eq=False)
class ControlledPathGrid:
    """A path ``Y`` with Gubinelli derivative ``Yp`` on the grid of ``base``."""

    base: RoughPathGrid
    Y: np.ndarray
    Yp: np.ndarray

    def __post_init__(self):
        n, d = len(self.base.grid), self.base.dim
        Y = np.array(self.Y, dtype=float)
        Yp = np.array(self.Yp, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Yp.shape == Y.shape and d == 1:
            Yp = Yp[..., None]
        elif Yp.ndim == 1 and Y.shape[1:] == (1,) and d == 1:
            Yp = Yp[:, None, None]
        if Y.shape[0] != n:
            raise ValueError(f"Y has {Y.shape[0]} samples, base grid has {n}")
        if Yp.shape != Y.shape + (d,):
            raise ValueError(f"Yp must have shape {Y.shape + (d,)}, got {Yp.shape}")
        Y.setflags(write=False)
        Yp.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Yp", Yp)

    @property
    def value_shape(self) -> tuple:
        return self.Y.shape[1:]


@dataclass(frozen=True)
class LocalErrorReport:
    """Diagnostic envelope (constant taken as 1) and the measured one-cell defect."""

    bound: float
    defect: float


def _check_pair(n: int, i: int, j: int) -> None:
    if not 0 <= i <= j < n:
        raise IndexError(f"need 0 <= i <= j < {n}, got i={i}, j={j}")


def remainder(cp: ControlledPathGrid, i: int, j: int) -> np.ndarray:
    """``R^Y_{t_i t_j} = Y_{t_i t_j} - Y'_{t_i} X_{t_i t_j}``."""
    _check_pair(len(cp.base.grid), i, j)
    inc = cp.base.X[j] - cp.base.X[i]
    return cp.Y[j] - cp.Y[i] - cp.Yp[i] @ inc


def controlled_from_function(
    F: Callable, DF: Callable, rp: RoughPathGrid
) -> ControlledPathGrid:
    """The prototype controlled path ``Y = F(X)``, ``Y' = DF(X)``.

    ``DF(x)`` must return the derivative with the differentiation axis last.
    """
    Y = np.array([np.asarray(F(x), dtype=float) for x in rp.X])
    Yp = np.array([np.asarray(DF(x), dtype=float) for x in rp.X])
    if Y.ndim == 1:
        Y = Y[:, None]
    Yp = Yp.reshape(Y.shape + (rp.dim,))
    return ControlledPathGrid(rp, Y, Yp)


def _sum_terms(terms: np.ndarray) -> np.ndarray:
    if terms.shape[0] <= COMPENSATED_THRESHOLD:
        return terms.sum(axis=0)
    flat = terms.reshape(terms.shape[0], -1)
    out = np.array([math.fsum(col) for col in flat.T])
    return out.reshape(terms.shape[1:])


def _cumsum_terms(terms: np.ndarray) -> np.ndarray:
    """Partial sums with a leading zero; Kahan-compensated for long sums."""
    out = np.zeros((terms.shape[0] + 1,) + terms.shape[1:])
    if terms.shape[0] <= COMPENSATED_THRESHOLD:
        np.cumsum(terms, axis=0, out=out[1:])
        return out
    s = np.zeros(terms.shape[1:])
    c = np.zeros(terms.shape[1:])
    for k in range(terms.shape[0]):
        y = terms[k] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[k + 1] = s
    return out


def _cell_terms(Y, dZ, Yp_eff, XX) -> np.ndarray:
    first = np.einsum("k...b,kb->k...", Y, dZ)
    second = np.einsum("k...bc,kcb->k...", Yp_eff, XX)
    return first + second


def _rough_terms(cp: ControlledPathGrid, i: int, j: int) -> np.ndarray:
    d = cp.base.dim
    if cp.value_shape[-1:] != (d,):
        raise ValueError(
            f"integrand values must be linear maps on R^{d} (trailing axis {d}), "
            f"got value shape {cp.value_shape}"
        )
    X = cp.base.X
    return _cell_terms(cp.Y[i:j], X[i + 1:j + 1] - X[i:j], cp.Yp[i:j], cp.base.XX_step[i:j])


def _controlled_terms(Ycp, Zcp, i, j) -> np.ndarray:
    if Ycp.base is not Zcp.base:
        raise ValueError("integrand and integrator must share the same base rough path")
    if len(Zcp.value_shape) != 1:
        raise ValueError(f"integrator values must be vectors, got shape {Zcp.value_shape}")
    m = Zcp.value_shape[0]
    if Ycp.value_shape[-1:] != (m,):
        raise ValueError(
            f"integrand values must be linear maps on R^{m}, got value shape {Ycp.value_shape}"
        )
    Z = Zcp.Y
    Yp_eff = np.einsum("k...bc,kbe->k...ec", Ycp.Yp[i:j], Zcp.Yp[i:j])
    return _cell_terms(Ycp.Y[i:j], Z[i + 1:j + 1] - Z[i:j], Yp_eff, Ycp.base.XX_step[i:j])


def integrate_against_rough(cp: ControlledPathGrid, i: int = 0, j: int | None = None) -> np.ndarray:
    """Compensated sum ``sum (Y_u X_uv + Y'_u XX_uv)`` over the grid cells of ``[t_i, t_j]``."""
    n = len(cp.base.grid)
    j = n - 1 if j is None else j
    _check_pair(n, i, j)
    return _sum_terms(_rough_terms(cp, i, j))


def integrate_against_controlled(
    Ycp: ControlledPathGrid, Zcp: ControlledPathGrid, i: int = 0, j: int | None = None
) -> np.ndarray:
    """Compensated sum ``sum (Y_u Z_uv + Y'_u Z'_u XX_uv)`` over the cells of ``[t_i, t_j]``.

    ``Y`` takes values in linear maps on ``R^m`` and ``Z`` in ``R^m``; both
    must be controlled by the same rough path.
    """
    n = len(Ycp.base.grid)
    j = n - 1 if j is None else j
    _check_pair(n, i, j)
    return _sum_terms(_controlled_terms(Ycp, Zcp, i, j))


def cumulative_rough_integral(cp: ControlledPathGrid) -> np.ndarray:
    """``int_0^{t_j} Y dX`` for every grid index ``j`` (first entry zero)."""
    return _cumsum_terms(_rough_terms(cp, 0, len(cp.base.grid) - 1))


def cumulative_controlled_integral(Ycp: ControlledPathGrid, Zcp: ControlledPathGrid) -> np.ndarray:
    """``int_0^{t_j} Y dZ`` for every grid index ``j`` (first entry zero)."""
    return _cumsum_terms(_controlled_terms(Ycp, Zcp, 0, len(Ycp.base.grid) - 1))


def _holder_seminorm(t: np.ndarray, values: np.ndarray, exponent: float) -> float:
    flat = values.reshape(values.shape[0], -1)
    best = 0.0
    for i in range(len(t) - 1):
        num = np.linalg.norm(flat[i + 1:] - flat[i], axis=1)
        best = max(best, float(np.max(num / (t[i + 1:] - t[i]) ** exponent)))
    return best


def local_error_report(cp: ControlledPathGrid, i: int, j: int) -> LocalErrorReport:
    """Compare the one-cell defect on ``[t_i, t_j]`` with the 3-alpha envelope.

    ``bound = (|R^Y|_{2a} |X|_a + |Y'|_a |XX|_{2a}) |t_j - t_i|^{3a}`` with all
    seminorms estimated on the grid points of ``[t_i, t_j]`` and the constant
    set to 1.  ``defect = |int - Y_i X_ij - Y'_i XX_ij|``.
    """
    rp = cp.base
    _check_pair(len(rp.grid), i, j)
    integral = integrate_against_rough(cp, i, j)
    XXij = second_level_lookup(rp, i, j)
    germ = cp.Y[i] @ (rp.X[j] - rp.X[i]) + np.einsum("...bc,cb->...", cp.Yp[i], XXij)
    defect = float(np.linalg.norm(np.asarray(integral - germ)))
    if j - i < 1:
        return LocalErrorReport(0.0, defect)

    a = rp.alpha
    t = rp.grid.points[i:j + 1]
    sub = restrict(rp, i, j)
    norms = holder_norms(sub)
    flatY = cp.Y[i:j + 1].reshape(j - i + 1, -1)
    flatYp = cp.Yp[i:j + 1].reshape(j - i + 1, -1, rp.dim)
    Xs = rp.X[i:j + 1]
    r_norm = 0.0
    for s in range(len(t) - 1):
        R = flatY[s + 1:] - flatY[s] - np.einsum("pc,kc->kp", flatYp[s], Xs[s + 1:] - Xs[s])
        num = np.linalg.norm(R, axis=1)
        r_norm = max(r_norm, float(np.max(num / (t[s + 1:] - t[s]) ** (2 * a))))
    yp_norm = _holder_seminorm(t, cp.Yp[i:j + 1], a)
    bound = (r_norm * norms.x_norm + yp_norm * norms.xx_norm) * (t[-1] - t[0]) ** (3 * a)
    return LocalErrorReport(float(bound), defect)


def finite_difference_jacobian(f: Callable, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference derivative of ``f`` at ``x``, differentiation axis last.

    Verification helper only; production paths always carry analytic
    Gubinelli derivatives.
    """
    x = np.asarray(x, dtype=float)
    fx = np.asarray(f(x), dtype=float)
    out = np.empty(fx.shape + x.shape)
    for idx in np.ndindex(x.shape):
        h = rel_step * max(1.0, abs(x[idx]))
        e = np.zeros_like(x)
        e[idx] = h
        out[(...,) + idx] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return out

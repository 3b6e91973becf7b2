"""Second-order (Davie) stepping for RDEs ``dy = F(y) dX`` and flow verifiers.

Shapes.  ``F(y)`` maps states of shape ``(..., m)`` to ``(..., m, d)``;
``DF(y)`` returns ``(..., m, d, m)`` with ``DF[a, b, c] = dF_ab / dy_c``;
the optional ``D2F(y)`` returns ``(..., m, d, m, m)``.  All solvers accept
batches of initial conditions along the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .rough_core import RoughPathGrid, TimeGrid
from .rough_integral import (
    ControlledPathGrid,
    cumulative_controlled_integral,
    cumulative_rough_integral,
    _cumsum_terms,
)

__all__ = [
    "VectorFieldSet",
    "TrajectoryPath",
    "StepFailure",
    "BLOWUP_NORM",
    "linear_vector_field",
    "zero_vector_field",
    "step_davie",
    "solve_rde",
    "iterate_davie",
    "verify_change_of_coords",
    "verify_composition",
    "verify_ito_wentzel",
    "verify_manifold_invariance",
]

BLOWUP_NORM = 1e12
FD_REL_STEP = 1e-6


class StepFailure(FloatingPointError):
    """A Davie step produced a non-finite state or one with norm above ``BLOWUP_NORM``."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True, eq=False)
class VectorFieldSet:
    """``d`` vector fields on ``R^m`` packed as ``F: R^m -> L(R^d, R^m)``."""

    m: int
    d: int
    F: Callable
    DF: Callable
    D2F: Callable | None = None
    name: str = ""
    affine: bool = False  # F affine in y: second derivative vanishes

    def second_derivative_along(self, y: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """``sum_c D2F[..., c, g] direction[..., c]``, shape ``(..., m, d, m)``.

        Falls back to a central difference of ``DF`` when ``D2F`` is absent.
        """
        if self.D2F is not None:
            return np.einsum("...abcg,...c->...abg", self.D2F(y), direction)
        scale = np.maximum(1.0, np.linalg.norm(y, axis=-1, keepdims=True))
        size = np.linalg.norm(direction, axis=-1, keepdims=True)
        eps = FD_REL_STEP * scale / np.where(size > 0, size, 1.0)
        diff = self.DF(y + eps * direction) - self.DF(y - eps * direction)
        return diff / (2 * eps[..., None, None])

    def validate(self, points, rtol: float = 1e-4) -> float:
        """Largest relative mismatch between ``DF`` and central differences of ``F``.

        Raises ``ValueError`` when it exceeds ``rtol``.
        """
        worst = 0.0
        for y in np.atleast_2d(np.asarray(points, dtype=float)):
            fd = np.empty((self.m, self.d, self.m))
            for c in range(self.m):
                h = FD_REL_STEP * max(1.0, abs(y[c]))
                e = np.zeros(self.m)
                e[c] = h
                fd[:, :, c] = (self.F(y + e) - self.F(y - e)) / (2 * h)
            exact = np.asarray(self.DF(y))
            err = np.max(np.abs(fd - exact)) / max(1.0, np.max(np.abs(exact)))
            worst = max(worst, float(err))
        if worst > rtol:
            raise ValueError(f"DF inconsistent with F: relative mismatch {worst:.3e} > {rtol}")
        return worst


def linear_vector_field(A) -> VectorFieldSet:
    """``F(y) e_i = A_i y``; ``A`` is one ``(m, m)`` matrix or a stack ``(d, m, m)``."""
    A = np.array(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    d, m, _ = A.shape
    DF_const = np.transpose(A, (1, 0, 2)).copy()  # [a, i, c] = A_i[a, c]

    def F(y):
        return np.einsum("iac,...c->...ai", A, y)

    def DF(y):
        y = np.asarray(y)
        return np.broadcast_to(DF_const, y.shape[:-1] + DF_const.shape)

    def D2F(y):
        y = np.asarray(y)
        return np.zeros(y.shape[:-1] + (m, d, m, m))

    return VectorFieldSet(m, d, F, DF, D2F, name="linear", affine=True)


def zero_vector_field(m: int, d: int) -> VectorFieldSet:
    return linear_vector_field(np.zeros((d, m, m)))


@dataclass(frozen=True, eq=False)
class TrajectoryPath:
    """Solution samples ``states[k] = phi_{t_k}(y0)``.

    When the solver hit a blow-up, ``blowup_index`` is the first grid index
    whose state could not be produced and the arrays stop just before it.
    """

    grid: TimeGrid
    states: np.ndarray
    jacobians: np.ndarray | None = None
    blowup_index: int | None = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.points[: self.states.shape[0]]

    @property
    def blowup_time(self) -> float | None:
        if self.blowup_index is None:
            return None
        return float(self.grid.points[self.blowup_index])


def _check_state(y: np.ndarray, time: float | None) -> None:
    if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > BLOWUP_NORM:
        where = "" if time is None else f" at t={time:.6g}"
        raise StepFailure(f"non-finite or exploding state{where}", time)


def step_davie(y, vf: VectorFieldSet, Xinc, XXinc, t: float | None = None) -> np.ndarray:
    """One second-order rough Taylor step.

    ``y + F(y) X_inc + sum_{b,e} (DF(y) F(y))[., b, e] XX_inc[e, b]``.
    """
    y = np.asarray(y, dtype=float)
    f = vf.F(y)
    df = vf.DF(y)
    m, d = vf.m, vf.d
    yp = (df.reshape(df.shape[:-3] + (m * d, m)) @ f).reshape(f.shape[:-2] + (m, d, d))
    out = y + f @ Xinc + np.tensordot(yp, np.asarray(XXinc).T, axes=([-2, -1], [0, 1]))
    _check_state(out, t)
    return out


def _step_jacobian(y, vf: VectorFieldSet, Xinc, XXinc) -> np.ndarray:
    """Exact derivative of the Davie step map at ``y``, shape ``(..., m, m)``."""
    f = vf.F(y)
    df = vf.DF(y)
    m, d = vf.m, vf.d
    first = np.tensordot(df, Xinc, axes=([-2], [0]))
    # D(DF.F)[v] = D2F[., F] v + DF DF v
    lead = df.shape[:-3]
    dff = (df.reshape(lead + (m * d, m)) @ df.reshape(lead + (m, d * m))).reshape(lead + (m, d, d, m))
    if not vf.affine:
        dff = dff + np.stack([vf.second_derivative_along(y, f[..., :, e]) for e in range(d)], axis=-2)
    second = np.tensordot(dff, np.asarray(XXinc).T, axes=([-3, -2], [0, 1]))
    eye = np.eye(vf.m)
    return eye + first + second


def iterate_davie(
    vf: VectorFieldSet,
    rp: RoughPathGrid,
    y0,
    with_jacobian: bool = False,
    jacobian0=None,
) -> Iterator[tuple[int, np.ndarray, np.ndarray | None]]:
    """Yield ``(k, y_k, J_k)`` for ``k = 0, 1, ...``; stops by raising :class:`StepFailure`."""
    if vf.d != rp.dim:
        raise ValueError(f"vector fields are driven by R^{vf.d}, rough path lives in R^{rp.dim}")
    y = np.array(y0, dtype=float)
    if y.shape[-1] != vf.m:
        raise ValueError(f"initial state must end in axis of size {vf.m}, got {y.shape}")
    J = None
    if with_jacobian:
        J = np.broadcast_to(np.eye(vf.m), y.shape + (vf.m,)).copy() if jacobian0 is None \
            else np.array(jacobian0, dtype=float)
    yield 0, y, J
    dX = rp.increments
    t = rp.grid.points
    for k in range(rp.n_steps):
        if with_jacobian:
            Jstep = _step_jacobian(y, vf, dX[k], rp.XX_step[k])
        y = step_davie(y, vf, dX[k], rp.XX_step[k], t=t[k + 1])
        if with_jacobian:
            J = Jstep @ J
            _check_state(J, t[k + 1])
        yield k + 1, y, J


def solve_rde(
    vf: VectorFieldSet,
    rp: RoughPathGrid,
    y0,
    with_jacobian: bool = False,
    jacobian0=None,
) -> TrajectoryPath:
    """Davie-scheme solution of ``dy = F(y) dX`` from ``y0`` over the grid of ``rp``.

    A step that fails (non-finite value or norm above ``BLOWUP_NORM``)
    truncates the trajectory; the failing grid index is kept as the
    numerical explosion time.
    """
    states, jacs = [], []
    blowup = None
    it = iterate_davie(vf, rp, y0, with_jacobian, jacobian0)
    k = 0
    while True:
        try:
            k, y, J = next(it)
        except StopIteration:
            break
        except StepFailure:
            blowup = k + 1
            break
        states.append(y)
        if with_jacobian:
            jacs.append(J)
    return TrajectoryPath(
        rp.grid,
        np.array(states),
        np.array(jacs) if with_jacobian else None,
        blowup,
    )


def _require_complete(traj: TrajectoryPath, what: str) -> None:
    if traj.blowup_index is not None:
        raise StepFailure(f"{what} exploded at t={traj.blowup_time:.6g}", traj.blowup_time)


def _directional_fd(func: Callable, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Central difference of ``func`` at ``x`` along ``direction`` (batched)."""
    scale = np.maximum(1.0, np.linalg.norm(x, axis=-1, keepdims=True))
    size = np.linalg.norm(direction, axis=-1, keepdims=True)
    eps = FD_REL_STEP * scale / np.where(size > 0, size, 1.0)
    plus = np.asarray(func(x + eps * direction))
    minus = np.asarray(func(x - eps * direction))
    eps = eps.reshape(eps.shape[:-1] + (1,) * (plus.ndim - eps.ndim + 1))
    return (plus - minus) / (2 * eps)


def _along_each_direction(func: Callable, x: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Stack ``_directional_fd(func, x, dirs[..., :, c])`` on a new last axis."""
    return np.stack([_directional_fd(func, x, dirs[..., :, c]) for c in range(dirs.shape[-1])], axis=-1)


def verify_change_of_coords(
    g: Callable, Dg: Callable, vf: VectorFieldSet, rp: RoughPathGrid, y0
) -> float:
    """Sup-norm gap between ``g(Z_t)`` and ``g(Z_0) + int Dg F(Z) dX``.

    ``Z`` solves ``dZ = F(Z) dX``.  The integrand's Gubinelli derivative
    ``D(Dg F)[F]`` is taken by central differences.
    """
    traj = solve_rde(vf, rp, y0)
    _require_complete(traj, "trajectory")
    Z = traj.states

    def integrand(z):
        return np.einsum("...pa,...ab->...pb", Dg(z), vf.F(z))

    Y = integrand(Z)
    Yp = _along_each_direction(integrand, Z, vf.F(Z))
    I = cumulative_rough_integral(ControlledPathGrid(rp, Y, Yp))
    gZ = np.asarray(g(Z))
    return float(np.max(np.abs(gZ - gZ[0] - I)))


def verify_composition(
    G: VectorFieldSet, H: VectorFieldSet, rp: RoughPathGrid, y0_set
) -> float:
    """Check that ``V_t = Y_t(Z_t(y0))`` solves ``dV = (G(V) + Y_* H(V)) dX``.

    ``Y`` and ``Z`` are the flows of ``G`` and ``H``.  ``V`` is formed by
    composing the two numerical flows; independently the compensated sum of
    ``W = G(V) + D_x Y_t(Z_t) H(Z_t)`` with its Gubinelli derivative is
    accumulated from ``y0``.  Returns the largest gap over ``y0_set`` and
    grid times.
    """
    if (G.m, G.d) != (H.m, H.d):
        raise ValueError("G and H must have the same state and driving dimensions")
    y0_set = np.atleast_2d(np.asarray(y0_set, dtype=float))
    m, d = G.m, G.d
    n = len(rp.grid)

    zt = solve_rde(H, rp, y0_set)
    _require_complete(zt, "flow of H")
    Z = zt.states  # (n, P, m)
    Hz = H.F(Z)  # (n, P, m, d)

    # start the G-flow from Z_j and +-eps along each H direction; member j is read at step j
    scale = np.maximum(1.0, np.linalg.norm(Z, axis=-1, keepdims=True))
    eps = []
    starts = [Z]
    for c in range(d):
        v = Hz[..., c]
        size = np.linalg.norm(v, axis=-1, keepdims=True)
        e = FD_REL_STEP * scale / np.where(size > 0, size, 1.0)
        eps.append(e)
        starts += [Z + e * v, Z - e * v]
    starts = np.stack(starts, axis=1)  # (n, 1 + 2d, P, m)

    # member j is only read at step j, so consumed members are dropped from the batch
    V = np.empty_like(Z)
    J = np.empty(Z.shape + (m,))
    Jpm = np.empty((n, 2 * d) + Z.shape[1:] + (m,))
    y = starts
    Jy = np.broadcast_to(np.eye(m), starts.shape + (m,)).copy()
    dX, t = rp.increments, rp.grid.points
    for k in range(n):
        V[k], J[k], Jpm[k] = y[0, 0], Jy[0, 0], Jy[0, 1:]
        if k == n - 1:
            break
        y, Jy = y[1:], Jy[1:]
        Jstep = _step_jacobian(y, G, dX[k], rp.XX_step[k])
        y = step_davie(y, G, dX[k], rp.XX_step[k], t=t[k + 1])
        Jy = Jstep @ Jy
        _check_state(Jy, t[k + 1])

    M = J @ Hz  # (n, P, m, d)
    DG_V = G.DF(V)  # (n, P, m, d, m)
    W = G.F(V) + M
    Wp = np.einsum("...abe,...ec->...abc", DG_V, W)
    # time derivative of D_x Y_t along X, applied to H(Z)
    Wp = Wp + np.einsum("...acg,...gb->...abc", DG_V, M)
    # spatial derivative of z -> D_x Y_t(z) H(z) along H(Z_t) e_c
    for c in range(d):
        zp = Z + eps[c] * Hz[..., c]
        zm = Z - eps[c] * Hz[..., c]
        diff = Jpm[:, 2 * c] @ H.F(zp) - Jpm[:, 2 * c + 1] @ H.F(zm)
        Wp[..., c] += diff / (2 * eps[c][..., None])

    terms = np.einsum("k...b,kb->k...", W[:-1], rp.increments) + np.einsum(
        "k...bc,kcb->k...", Wp[:-1], rp.XX_step
    )
    V_ind = y0_set + _cumsum_terms(terms)
    return float(np.max(np.abs(V_ind - V)))


def _axes_interpolate(axes: Sequence[np.ndarray], values: np.ndarray, points: np.ndarray) -> np.ndarray:
    itp = RegularGridInterpolator(tuple(axes), values, method="linear", bounds_error=True)
    return itp(points)


def verify_ito_wentzel(
    h_family: Callable,
    Dh_family: Callable,
    g0: Callable,
    vf_for_Z: VectorFieldSet,
    rp: RoughPathGrid,
    x_probe_set: Sequence[np.ndarray],
    z0,
    Dg0: Callable,
) -> float:
    """Sup-norm residual of the Ito-Wentzel formula along a solution ``Z``.

    Parameters
    ----------
    h_family
        ``h_family(k, x) -> (h, h')``: the field ``h(t_k, x)`` with values in
        ``L(R^d, R^p)`` (shape ``(..., p, d)``) and its Gubinelli derivative
        in time (shape ``(..., p, d, d)``).  ``k`` is an integer array of grid
        indices broadcasting against the leading axes of ``x``.
    Dh_family
        ``Dh_family(k, x) -> (D_x h, (D_x h)')`` with shapes
        ``(..., p, d, l)`` and ``(..., p, d, l, d)``.
    g0, Dg0
        Initial field ``g(0, .)`` and its spatial derivative ``(..., p, l)``.
    vf_for_Z
        Vector fields driving ``Z`` in ``R^l``.
    x_probe_set
        One increasing axis per state coordinate; ``g(t, .)`` is integrated
        on the tensor grid of probes and interpolated (multilinearly) at
        ``Z_t`` for the left-hand side.
    z0
        Initial point of ``Z``.

    The right-hand side ``g(0, Z_0) + int h(r, Z_r) dX_r + int Dg(r, Z_r) dZ_r``
    uses the two compensated-sum integrals.  ``Dg(t, x)`` is integrated along
    each evaluation point and its spatial Gubinelli term is a central
    difference across nearby points.
    """
    traj = solve_rde(vf_for_Z, rp, z0)
    _require_complete(traj, "trajectory of Z")
    Z = traj.states  # (n, l)
    n, l = Z.shape
    axes = [np.asarray(a, dtype=float) for a in x_probe_set]
    if len(axes) != l:
        raise ValueError(f"need {l} probe axes, got {len(axes)}")
    for c, a in enumerate(axes):
        if Z[:, c].min() < a[0] or Z[:, c].max() > a[-1]:
            raise ValueError(
                f"probe hull [{a[0]}, {a[-1]}] does not contain the trajectory along axis {c} "
                f"(range [{Z[:, c].min():.6g}, {Z[:, c].max():.6g}])"
            )
    Zp = vf_for_Z.F(Z)  # (n, l, d)
    ks = np.arange(n)
    dX = rp.increments
    XX = rp.XX_step

    # g(t_j, x) on the probe grid
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    probes = mesh.reshape(-1, l)
    g0_probe = np.asarray(g0(probes), dtype=float).reshape(probes.shape[0], -1)
    Q, p = g0_probe.shape
    d = rp.dim
    hk, hpk = h_family(ks[:, None], probes[None, :, :])
    hk = np.broadcast_to(hk, (n, Q, p, d))
    hpk = np.broadcast_to(hpk, (n, Q, p, d, d))
    terms = np.einsum("kqpb,kb->kqp", hk[:-1], dX) + np.einsum("kqpbc,kcb->kqp", hpk[:-1], XX)
    g_probe = g0_probe[None] + _cumsum_terms(terms)
    g_probe = g_probe.reshape((n,) + mesh.shape[:-1] + (p,))
    left = np.array([_axes_interpolate(axes, g_probe[j], Z[j][None])[0] for j in range(n)])

    # int h(r, Z_r) dX_r
    h_Z, hp_Z = h_family(ks, Z)
    Dh_Z, _ = Dh_family(ks, Z)
    h_Z = np.broadcast_to(h_Z, (n, p, d))
    hp_Z = np.broadcast_to(hp_Z, (n, p, d, d))
    Dh_Z = np.broadcast_to(Dh_Z, (n, p, d, l))
    Yp = hp_Z + np.einsum("kpbi,kic->kpbc", Dh_Z, Zp)
    first = cumulative_rough_integral(ControlledPathGrid(rp, h_Z, Yp))

    # Dg(t_j, x_j) = Dg0(x_j) + int_0^{t_j} D_x h(s, x_j) dX_s, evaluated pointwise
    def Dg_at(x):  # x: (n, l) -> (n, p, l)
        out = np.empty((n, p, l))
        out[0] = 0.0
        block = 256
        for start in range(1, n, block):
            stop = min(n, start + block)
            js = np.arange(start, stop)
            Dh, Dhp = Dh_family(ks[:stop - 1, None], x[None, js])
            Dh = np.broadcast_to(Dh, (stop - 1, js.size, p, d, l))
            Dhp = np.broadcast_to(Dhp, (stop - 1, js.size, p, d, l, d))
            cell = np.einsum("kjpbi,kb->kjpi", Dh, dX[:stop - 1]) + np.einsum(
                "kjpbic,kcb->kjpi", Dhp, XX[:stop - 1]
            )
            csum = np.cumsum(cell, axis=0)
            out[js] = csum[js - 1, np.arange(js.size)]
        return out + np.asarray(Dg0(x), dtype=float).reshape(n, p, l)

    Phi = Dg_at(Z)  # (n, p, l)
    Phip = np.empty(Phi.shape + (rp.dim,))
    scale = np.maximum(1.0, np.linalg.norm(Z, axis=-1, keepdims=True))
    for c in range(rp.dim):
        v = Zp[..., c]
        size = np.linalg.norm(v, axis=-1, keepdims=True)
        e = FD_REL_STEP * scale / np.where(size > 0, size, 1.0)
        spatial = (Dg_at(Z + e * v) - Dg_at(Z - e * v)) / (2 * e[..., None])
        # d_t Dg(t, x) = D_x h(t, x) dX_t
        Phip[..., c] = spatial + Dh_Z[:, :, c, :]
    second = cumulative_controlled_integral(
        ControlledPathGrid(rp, Phi, Phip), ControlledPathGrid(rp, Z, Zp)
    )
    right = np.asarray(g0(Z[0]), dtype=float).reshape(p) + first + second
    return float(np.max(np.abs(left - right)))


def verify_manifold_invariance(
    vf: VectorFieldSet, rp: RoughPathGrid, y0, tol: float = 1e-10
) -> float:
    """``max_t | |y_t| - 1 |`` for fields tangent to the unit sphere.

    Raises ``ValueError`` unless ``|y0| = 1`` and ``F(y0)`` is orthogonal to
    ``y0`` within ``tol``.
    """
    y0 = np.asarray(y0, dtype=float)
    if abs(np.linalg.norm(y0) - 1.0) > tol:
        raise ValueError(f"initial point is not on the unit sphere (|y0| = {np.linalg.norm(y0)!r})")
    normal = np.abs(y0 @ vf.F(y0))
    if np.any(normal > tol):
        raise ValueError(f"vector fields are not tangent to the sphere at y0 (normal part {normal.max():.3e})")
    traj = solve_rde(vf, rp, y0)
    _require_complete(traj, "trajectory")
    return float(np.max(np.abs(np.linalg.norm(traj.states, axis=-1) - 1.0)))

"""Two-factor decomposition ``Phi_t = eta_t psi_t`` of linear RDE flows.

For ``dx = A x dX`` and the Cartesian splitting ``R^m = R^k x R^l`` the
flow factors as::

    eta = [[G1, G2],      psi = [[I,  0 ],
           [0,  I ]]             [F3, F4]]

with ``A = [[A1, A2], [A3, A4]]`` in the same block layout.  The four
blocks solve a coupled quadratic RDE which is stepped jointly here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rde_solver import BLOWUP_NORM
from .rough_core import RoughPathGrid, TimeGrid

__all__ = [
    "BlockPartition",
    "LinearFlowPath",
    "ExplosionReport",
    "DecompositionPair",
    "RotationOracle",
    "DEFAULT_THRESHOLD",
    "F4_COND_LIMIT",
    "linear_step_matrix",
    "linear_step_matrices",
    "solve_linear_flow",
    "decompose_blocks",
    "recompose",
    "detect_explosion",
    "rotation_oracle",
    "check_linearity_structure",
    "split_blocks",
]

DEFAULT_THRESHOLD = 1e6
F4_COND_LIMIT = 1e12


@dataclass(frozen=True)
class BlockPartition:
    """Top block size ``k`` and bottom block size ``ell``."""

    k: int
    ell: int

    def __post_init__(self):
        if int(self.k) != self.k or int(self.ell) != self.ell or self.k < 1 or self.ell < 1:
            raise ValueError(f"block sizes must be positive integers, got k={self.k}, ell={self.ell}")

    @property
    def m(self) -> int:
        return self.k + self.ell


@dataclass(frozen=True, eq=False)
class LinearFlowPath:
    """Matrices ``Phi_{t_i}`` on ``grid``; truncated at ``blowup_index`` if set."""

    grid: TimeGrid
    matrices: np.ndarray
    blowup_index: int | None = None

    def __post_init__(self):
        M = np.asarray(self.matrices, dtype=float)
        if M.ndim != 3 or M.shape[1] != M.shape[2]:
            raise ValueError(f"matrices must have shape (n, m, m), got {M.shape}")
        if M.shape[0] > len(self.grid):
            raise ValueError("more matrices than grid points")
        object.__setattr__(self, "matrices", M)

    @property
    def m(self) -> int:
        return self.matrices.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points[: self.matrices.shape[0]]


@dataclass(frozen=True)
class ExplosionReport:
    """``first_index`` is the grid index whose factors could not be produced."""

    exploded: bool
    first_index: int | None
    threshold: float
    time: float | None = None
    reason: str = ""


@dataclass(frozen=True, eq=False)
class DecompositionPair:
    eta: LinearFlowPath
    psi: LinearFlowPath
    partition: BlockPartition
    explosion: ExplosionReport


@dataclass(frozen=True, eq=False)
class RotationOracle:
    """Closed-form factors of the planar rotation flow; singular samples hold NaN."""

    eta: np.ndarray
    psi: np.ndarray
    singular: np.ndarray


def _as_stack(A) -> np.ndarray:
    A = np.array(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"A must be (m, m) or (d, m, m), got shape {A.shape}")
    return A


def linear_step_matrices(A, dX, XX) -> np.ndarray:
    """``I + sum_i A_i X^i + sum_{i,j} A_j A_i XX^{ij}`` for every step; ``dX`` is ``(n, d)``."""
    A = _as_stack(A)
    m = A.shape[1]
    # pairs[j, i] = A_j A_i
    pairs = np.einsum("jab,ibc->jiac", A, A)
    first = np.einsum("ki,iab->kab", np.asarray(dX, dtype=float), A)
    second = np.einsum("kij,jiab->kab", np.asarray(XX, dtype=float), pairs)
    return np.eye(m) + first + second


def linear_step_matrix(A, Xinc, XXinc) -> np.ndarray:
    """Single-step version of :func:`linear_step_matrices`."""
    return linear_step_matrices(A, np.asarray(Xinc)[None], np.asarray(XXinc)[None])[0]


def _blown(M: np.ndarray, limit: float) -> bool:
    return not np.all(np.isfinite(M)) or np.max(np.abs(M)) > limit


def solve_linear_flow(A, rp: RoughPathGrid) -> LinearFlowPath:
    """Davie solution of ``dPhi = (sum_i A_i dX^i) Phi``, ``Phi_0 = I``.

    ``A`` is one matrix (scalar driver) or a stack with one matrix per
    driving component.  Entries above ``BLOWUP_NORM`` truncate the path.
    """
    A = _as_stack(A)
    if A.shape[0] != rp.dim:
        raise ValueError(f"{A.shape[0]} coefficient matrices for a {rp.dim}-dimensional driver")
    m = A.shape[1]
    steps = linear_step_matrices(A, rp.increments, rp.XX_step)
    out = np.empty((len(rp.grid), m, m))
    out[0] = np.eye(m)
    for k in range(rp.n_steps):
        nxt = steps[k] @ out[k]
        if _blown(nxt, BLOWUP_NORM):
            return LinearFlowPath(rp.grid, out[: k + 1], blowup_index=k + 1)
        out[k + 1] = nxt
    return LinearFlowPath(rp.grid, out)


def split_blocks(A, partition: BlockPartition):
    """``(A1, A2, A3, A4)`` of a square matrix under ``partition``."""
    A = np.asarray(A, dtype=float)
    k = partition.k
    if A.shape != (partition.m, partition.m):
        raise ValueError(f"matrix shape {A.shape} does not match partition with m={partition.m}")
    return A[:k, :k], A[:k, k:], A[k:, :k], A[k:, k:]


def _rhs(blocks, top, bot):
    """Right-hand side on the row blocks ``top = [G1 | G2]`` and ``bot = [F3 | F4]``.

    ``dG1 = A1 G1 - G2 A3 G1``, ``dG2 = A1 G2 + A2 - G2 A4 - G2 A3 G2``,
    ``dF3 = A3 G1 + A3 G2 F3 + A4 F3``, ``dF4 = A3 G2 F4 + A4 F4``.
    """
    A1, A2, A3, A4 = blocks
    k = A1.shape[0]
    G2 = top[:, k:]
    dtop = (A1 - G2 @ A3) @ top
    dtop[:, k:] += A2 - G2 @ A4
    dbot = (A3 @ G2 + A4) @ bot
    dbot[:, :k] += A3 @ top[:, :k]
    return dtop, dbot


def _rhs_derivative(blocks, top, bot, vtop, vbot):
    """Directional derivative of ``_rhs`` along ``(vtop, vbot)``; exact since the map is quadratic."""
    A1, A2, A3, A4 = blocks
    k = A1.shape[0]
    G2, V2 = top[:, k:], vtop[:, k:]
    dtop = (A1 - G2 @ A3) @ vtop - (V2 @ A3) @ top
    dtop[:, k:] -= V2 @ A4
    dbot = (A3 @ G2 + A4) @ vbot + (A3 @ V2) @ bot
    dbot[:, :k] += A3 @ vtop[:, :k]
    return dtop, dbot


def _cond_estimate(F4: np.ndarray) -> float:
    try:
        inv = np.linalg.inv(F4)
    except np.linalg.LinAlgError:
        return np.inf
    return float(np.abs(F4).sum(axis=0).max() * np.abs(inv).sum(axis=0).max())


def _factor_paths(grid, partition, states, blowup_index):
    k, ell = partition.k, partition.ell
    n = len(states)
    eta = np.zeros((n, k + ell, k + ell))
    psi = np.zeros((n, k + ell, k + ell))
    eta[:, k:, k:] = np.eye(ell)
    psi[:, :k, :k] = np.eye(k)
    for i, (top, bot) in enumerate(states):
        eta[i, :k, :] = top
        psi[i, k:, :] = bot
    return LinearFlowPath(grid, eta, blowup_index), LinearFlowPath(grid, psi, blowup_index)


def decompose_blocks(
    A, partition: BlockPartition, rp: RoughPathGrid, threshold: float = DEFAULT_THRESHOLD
) -> DecompositionPair:
    """Co-evolve ``(G1, G2, F3, F4)`` with the Davie step under a scalar driver.

    The step is ``S + f(S) X_inc + Df(S)[f(S)] XX_inc`` on the stacked
    state.  Stepping stops at the first index where an entry exceeds
    ``threshold``, an entry is non-finite, or the 1-norm condition number
    of ``F4`` exceeds ``F4_COND_LIMIT``; the factors are then truncated and the report says so.
    """
    if rp.dim != 1:
        raise ValueError(
            f"decompose_blocks supports a scalar driver only, got a {rp.dim}-dimensional rough path"
        )
    blocks = split_blocks(A, partition)
    k, ell = partition.k, partition.ell
    top = np.hstack([np.eye(k), np.zeros((k, ell))])
    bot = np.hstack([np.zeros((ell, k)), np.eye(ell)])
    states = [(top, bot)]
    dX = rp.increments[:, 0]
    XX = rp.XX_step[:, 0, 0]
    t = rp.grid.points
    report = ExplosionReport(False, None, float(threshold))
    for i in range(rp.n_steps):
        ftop, fbot = _rhs(blocks, top, bot)
        dtop, dbot = _rhs_derivative(blocks, top, bot, ftop, fbot)
        ntop = top + ftop * dX[i] + dtop * XX[i]
        nbot = bot + fbot * dX[i] + dbot * XX[i]
        reason = ""
        if not (np.all(np.isfinite(ntop)) and np.all(np.isfinite(nbot))):
            reason = "non-finite entry"
        elif max(np.abs(ntop).max(), np.abs(nbot).max()) > threshold:
            reason = "entry above threshold"
        elif _cond_estimate(nbot[:, k:]) > F4_COND_LIMIT:
            reason = "F4 ill-conditioned"
        if reason:
            report = ExplosionReport(True, i + 1, float(threshold), float(t[i + 1]), reason)
            break
        top, bot = ntop, nbot
        states.append((top, bot))
    eta, psi = _factor_paths(rp.grid, partition, states, report.first_index)
    return DecompositionPair(eta, psi, partition, report)


def recompose(pair: DecompositionPair, reference: LinearFlowPath) -> float:
    """``max_t |eta_t psi_t - Phi_t|_F`` over the indices both paths cover."""
    if pair.eta.grid is not reference.grid and not np.array_equal(
        pair.eta.grid.points, reference.grid.points
    ):
        raise ValueError("decomposition and reference flow live on different grids")
    n = min(pair.eta.matrices.shape[0], reference.matrices.shape[0])
    prod = pair.eta.matrices[:n] @ pair.psi.matrices[:n]
    diff = prod - reference.matrices[:n]
    return float(np.max(np.linalg.norm(diff, axis=(1, 2)), initial=0.0))


def detect_explosion(pair: DecompositionPair) -> ExplosionReport:
    return pair.explosion


def rotation_oracle(X_values, atol: float = 1e-12) -> RotationOracle:
    """``eta = [[sec X, -tan X], [0, 1]]`` and ``psi = [[1, 0], [sin X, cos X]]``.

    Samples with ``|cos X| <= atol`` are flagged singular and their ``eta``
    entries set to NaN.
    """
    X = np.atleast_1d(np.asarray(X_values, dtype=float))
    c, s = np.cos(X), np.sin(X)
    singular = np.abs(c) <= atol
    safe_c = np.where(singular, np.nan, c)
    n = X.shape[0]
    eta = np.zeros((n, 2, 2))
    eta[:, 0, 0] = 1.0 / safe_c
    eta[:, 0, 1] = -s / safe_c
    eta[:, 1, 1] = 1.0
    psi = np.zeros((n, 2, 2))
    psi[:, 0, 0] = 1.0
    psi[:, 1, 0] = s
    psi[:, 1, 1] = c
    return RotationOracle(eta, psi, singular)


def check_linearity_structure(pair: DecompositionPair) -> bool:
    """Exact check of the fixed blocks: ``eta`` bottom rows ``[0 | I]``, ``psi`` top rows ``[I | 0]``."""
    k, ell = pair.partition.k, pair.partition.ell
    eta, psi = pair.eta.matrices, pair.psi.matrices
    if eta.shape[1:] != (k + ell, k + ell) or psi.shape[1:] != (k + ell, k + ell):
        return False
    return bool(
        np.all(eta[:, k:, :k] == 0.0)
        and np.all(eta[:, k:, k:] == np.eye(ell))
        and np.all(psi[:, :k, :k] == np.eye(k))
        and np.all(psi[:, :k, k:] == 0.0)
    )

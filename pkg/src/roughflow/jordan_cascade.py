"""Cascade decomposition of linear flows in a real block basis.

The ordered real Schur form ``T = P^T A P`` is block upper triangular with
1x1 blocks for real eigenvalues and 2x2 blocks for complex pairs.  Every
nested lower-left block of ``T`` vanishes, which is all the cascade needs:
splitting after each diagonal block never explodes, and the flow factors
into ``k`` matrices that each differ from the identity in one row band.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .linear_decomp import (
    DEFAULT_THRESHOLD,
    BlockPartition,
    ExplosionReport,
    LinearFlowPath,
    decompose_blocks,
    solve_linear_flow,
)
from .rough_core import RoughPathGrid, TimeGrid, lift_linear

__all__ = [
    "RealBlockBasis",
    "CascadeFactorization",
    "CascadeExplosion",
    "real_block_form",
    "cascade_decompose",
    "recompose_cascade",
    "factor_matrix_with_real_log",
    "band_bounds",
]

# off-band rows match the identity only to scheme accuracy; larger gaps mean a bug
BAND_TOL = 1e-4
LOG_CHECK_STEPS = 400
LOG_CHECK_RTOL = 1e-3


class CascadeExplosion(RuntimeError):
    """An intermediate two-factor split exploded."""

    def __init__(self, message: str, report: ExplosionReport, split: int):
        super().__init__(message)
        self.report = report
        self.split = split


@dataclass(frozen=True, eq=False)
class RealBlockBasis:
    """``T = P^{-1} A P`` with diagonal blocks of sizes ``block_dims``."""

    P: np.ndarray
    block_dims: tuple
    T: np.ndarray

    @property
    def k(self) -> int:
        return len(self.block_dims)

    @property
    def m(self) -> int:
        return self.T.shape[0]

    @property
    def splits(self) -> np.ndarray:
        """Offsets ``s_0 = 0, s_1, ..., s_k = m`` of the diagonal blocks."""
        return np.concatenate([[0], np.cumsum(self.block_dims)]).astype(int)

    def block_eigenvalues(self) -> list:
        s = self.splits
        return [np.linalg.eigvals(self.T[s[i]:s[i + 1], s[i]:s[i + 1]]) for i in range(self.k)]


@dataclass(frozen=True, eq=False)
class CascadeFactorization:
    """Factors ``xi^1 .. xi^k`` in the block basis; ``prod xi^i = P^{-1} Phi P``."""

    basis: RealBlockBasis
    factors: tuple
    grid: TimeGrid
    log_matrix: np.ndarray | None = None
    dynamic_gap: float | None = None
    band_gap: float = 0.0

    def product(self) -> np.ndarray:
        out = self.factors[0].matrices.copy()
        for f in self.factors[1:]:
            out = out @ f.matrices
        return out

    def final_factors(self) -> list:
        return [f.matrices[-1] for f in self.factors]


def band_bounds(basis: RealBlockBasis, i: int) -> tuple:
    """Row range ``[s_{i}, s_{i+1})`` of factor ``i`` (0-based)."""
    s = basis.splits
    return int(s[i]), int(s[i + 1])


def _schur_blocks(T: np.ndarray) -> list:
    """``(start, size)`` of each diagonal block of a quasi-triangular matrix."""
    m = T.shape[0]
    out, i = [], 0
    while i < m:
        size = 2 if i + 1 < m and T[i + 1, i] != 0.0 else 1
        out.append((i, size))
        i += size
    return out


def _block_key(T, start, size):
    ev = np.linalg.eigvals(T[start:start + size, start:start + size])
    return float(ev.real.mean()), float(np.abs(ev.imag).max())


def real_block_form(A, order: Sequence[int] | None = None) -> RealBlockBasis:
    """Orthogonal real Schur reduction with sorted diagonal blocks.

    Blocks are sorted by ascending real part, then ascending imaginary
    magnitude, then original Schur position.  ``order`` optionally permutes
    that default sequence (``order[p]`` is the default rank placed at
    position ``p``).
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A has non-finite entries")
    try:
        T, Z = scipy.linalg.schur(A, output="real")
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"real Schur iteration did not converge: {exc}") from exc

    blocks = _schur_blocks(T)
    keys = [_block_key(T, s, n) + (idx,) for idx, (s, n) in enumerate(blocks)]
    ranked = sorted(range(len(blocks)), key=lambda b: keys[b])
    if order is not None:
        if sorted(order) != list(range(len(blocks))):
            raise ValueError(f"order must be a permutation of range({len(blocks)})")
        ranked = [ranked[r] for r in order]
    targets = [keys[b][:2] for b in ranked]

    # selection by repeated block moves; blocks are matched by eigenvalue key
    for pos, target in enumerate(targets):
        current = _schur_blocks(T)
        cand = [
            (abs(_block_key(T, s, n)[0] - target[0]) + abs(_block_key(T, s, n)[1] - target[1]), j)
            for j, (s, n) in enumerate(current) if j >= pos
        ]
        j = min(cand)[1]
        if j != pos:
            T, Z, info = lapack.dtrexc(T, Z, current[j][0] + 1, current[pos][0] + 1)
            if info != 0:
                raise np.linalg.LinAlgError(f"block reordering rejected (info={info}); blocks too close")
    blocks = _schur_blocks(T)
    dims = tuple(n for _, n in blocks)
    # strictly below the block diagonal is round-off; make it exact
    mask = np.zeros_like(T, dtype=bool)
    for s, n in blocks:
        mask[s + n:, s:s + n] = True
    T = np.where(mask, 0.0, T)
    return RealBlockBasis(Z, dims, T)


def _embed_band(xi: np.ndarray, lo: int, hi: int, where: str) -> tuple:
    """Check ``xi`` is the identity outside its band; return the exact embedding and the gap."""
    m = xi.shape[-1]
    eye = np.eye(m)
    out = np.broadcast_to(eye, xi.shape).copy()
    out[:, lo:hi, lo:] = xi[:, lo:hi, lo:]
    gap = np.max(np.abs(xi - out), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(xi), initial=0.0)))
    if not gap <= BAND_TOL * scale:
        raise RuntimeError(f"{where}: factor departs from its row band by {gap:.3e}")
    return out, float(gap)


def cascade_decompose(
    A, rp: RoughPathGrid, threshold: float = DEFAULT_THRESHOLD, basis: RealBlockBasis | None = None
) -> CascadeFactorization:
    """``k``-factor decomposition of the flow of ``dx = A x dX`` (scalar driver).

    For each split after block ``i`` the two-factor decomposition gives
    ``eta~^i``; then ``xi^1 = eta~^1``, ``xi^i = (eta~^{i-1})^{-1} eta~^i``
    and ``xi^k = psi~^{k-1}``.
    """
    if rp.dim != 1:
        raise ValueError(f"cascade needs a scalar driver, got dimension {rp.dim}")
    basis = real_block_form(A) if basis is None else basis
    T, s, k = basis.T, basis.splits, basis.k
    if k == 1:
        flow = solve_linear_flow(T, rp)
        if flow.blowup_index is not None:
            report = ExplosionReport(True, flow.blowup_index, float(threshold),
                                     float(rp.grid.points[flow.blowup_index]), "flow blow-up")
            raise CascadeExplosion("flow exploded", report, 0)
        return CascadeFactorization(basis, (flow,), rp.grid)

    etas, last_psi = [], None
    for i in range(1, k):
        pair = decompose_blocks(T, BlockPartition(int(s[i]), basis.m - int(s[i])), rp, threshold)
        if pair.explosion.exploded:
            raise CascadeExplosion(
                f"split after block {i} exploded at t={pair.explosion.time:.6g}", pair.explosion, i
            )
        etas.append(pair.eta.matrices)
        last_psi = pair.psi.matrices

    raw = [etas[0]]
    for i in range(1, k - 1):
        raw.append(np.linalg.solve(etas[i - 1], etas[i]))
    raw.append(last_psi)
    factors, band_gap = [], 0.0
    for i, xi in enumerate(raw):
        lo, hi = band_bounds(basis, i)
        exact, gap = _embed_band(xi, lo, hi, f"factor {i + 1}")
        factors.append(LinearFlowPath(rp.grid, exact))
        band_gap = max(band_gap, gap)
    return CascadeFactorization(basis, tuple(factors), rp.grid, band_gap=band_gap)


def recompose_cascade(cf: CascadeFactorization, reference: LinearFlowPath) -> float:
    """``max_t |prod_i xi^i_t - P^{-1} Phi_t P|_F``; ``reference`` is in the original basis."""
    if cf.grid is not reference.grid and not np.array_equal(cf.grid.points, reference.grid.points):
        raise ValueError("factorization and reference flow live on different grids")
    P = cf.basis.P
    prod = cf.product()
    n = min(prod.shape[0], reference.matrices.shape[0])
    target = P.T @ reference.matrices[:n] @ P
    return float(np.max(np.linalg.norm(prod[:n] - target, axis=(1, 2)), initial=0.0))


def _check_log_domain(M: np.ndarray) -> None:
    ev = np.linalg.eigvals(M)
    scale = max(1.0, float(np.max(np.abs(ev))))
    bad = ev[(np.abs(ev.imag) <= 1e-12 * scale) & (ev.real <= 1e-12 * scale)]
    if bad.size:
        raise ValueError(
            f"matrix has eigenvalue(s) {np.round(bad.real, 12).tolist()} on the closed negative "
            "real axis; only matrices with a principal real logarithm are supported"
        )


def factor_matrix_with_real_log(
    M, check_steps: int = LOG_CHECK_STEPS, check_rtol: float = LOG_CHECK_RTOL
) -> CascadeFactorization:
    """Row-band factors of ``P^{-1} M P`` for ``M = e^A`` with ``A`` the principal real log.

    The factors at ``t = 1`` are computed from the block upper triangular
    ``P^{-1} M P`` directly: with ``L_i`` its lower-right block from split
    ``s_i``, ``xi^i = diag(I, L_{i-1}) diag(I, L_i)^{-1}``.  They are
    cross-checked against the dynamic cascade of ``X_t = t`` on
    ``check_steps`` steps; ``dynamic_gap`` records the relative mismatch.
    """
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"M must be square, got shape {M.shape}")
    _check_log_domain(M)
    logM, err = scipy.linalg.logm(M, disp=False)
    if np.iscomplexobj(logM):
        if np.max(np.abs(logM.imag)) > 1e-10 * max(1.0, np.max(np.abs(logM.real))):
            raise np.linalg.LinAlgError("matrix logarithm is not real")
        logM = logM.real
    if not np.isfinite(err) or err > 1e-6:
        raise np.linalg.LinAlgError(f"matrix logarithm did not converge (error estimate {err:.3e})")

    basis = real_block_form(logM)
    P, s, k, m = basis.P, basis.splits, basis.k, basis.m
    Mt = P.T @ M @ P
    factors = []
    for i in range(k):
        lo, hi = int(s[i]), int(s[i + 1])
        xi = np.eye(m)
        if i == k - 1:
            xi[lo:, lo:] = Mt[lo:, lo:]
        else:
            # band rows of diag(I, L_{i}) diag(I, L_{i+1})^{-1}
            L_next = Mt[hi:, hi:]
            xi[lo:hi, lo:hi] = Mt[lo:hi, lo:hi]
            xi[lo:hi, hi:] = np.linalg.solve(L_next.T, Mt[lo:hi, hi:].T).T
        factors.append(xi)

    grid = TimeGrid(np.array([0.0, 1.0]))
    paths = tuple(LinearFlowPath(grid, np.stack([np.eye(m), f])) for f in factors)
    gap = None
    if check_steps:
        rp = lift_linear(TimeGrid.uniform(1.0, check_steps), [1.0])
        dyn = cascade_decompose(logM, rp, basis=basis).final_factors()
        gap = max(
            float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a)))) for a, b in zip(factors, dyn)
        )
        if gap > check_rtol:
            raise RuntimeError(f"algebraic and dynamic factors disagree (relative gap {gap:.3e})")
    return CascadeFactorization(basis, paths, grid, log_matrix=logM, dynamic_gap=gap)

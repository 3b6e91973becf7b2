"""k-factor cascade in a real Schur basis, and factorizing a single matrix.

Run: python demos/05_cascade.py
"""

import numpy as np
from scipy.linalg import expm

from roughflow import (
    TimeGrid,
    cascade_decompose,
    factor_matrix_with_real_log,
    lift_linear,
    real_block_form,
    recompose_cascade,
    solve_linear_flow,
)

rng = np.random.default_rng(1)
Q = rng.normal(size=(4, 4)) + 2 * np.eye(4)
D = np.zeros((4, 4))
D[0, 0], D[1:3, 1:3], D[3, 3] = 2.0, [[0.5, -1.0], [1.0, 0.5]], -1.0
A = Q @ D @ np.linalg.inv(Q)
A *= 2 / np.linalg.norm(A, 2)

basis = real_block_form(A)
print("block sizes (ascending real part):", basis.block_dims)
print("block eigenvalues:", [np.round(ev, 4).tolist() for ev in basis.block_eigenvalues()])

rp = lift_linear(TimeGrid.uniform(1.0, 4000), [1.0])
cf = cascade_decompose(A, rp, basis=basis)
print(f"\n{len(cf.factors)} factors; each is the identity outside its row band")
for i, M in enumerate(cf.final_factors()):
    print(f"xi^{i + 1}_1 =\n{np.round(M, 4)}")
print(f"max |prod xi - P^T Phi P| = {recompose_cascade(cf, solve_linear_flow(A, rp)):.2e}")
print(f"largest factor entry {max(np.abs(f.matrices).max() for f in cf.factors):.3f}"
      f" vs e^(2|A|) = {np.exp(2 * np.linalg.norm(A, 2)):.1f}")

M = expm(np.array([[0.4, 1.0, 0.3], [0.0, 0.1, -0.8], [0.0, 0.8, 0.1]]))
fm = factor_matrix_with_real_log(M)
prod = np.linalg.multi_dot(fm.final_factors())
print(f"\nsingle matrix: {len(fm.factors)} factors, block sizes {fm.basis.block_dims}")
print(f"round trip error {np.abs(prod - fm.basis.P.T @ M @ fm.basis.P).max():.1e}, "
      f"algebraic vs dynamic factors {fm.dynamic_gap:.1e}")

"""Splitting the planar rotation flow into a horizontal and a vertical factor.

eta_t = [[sec X, -tan X], [0, 1]] and psi_t = [[1, 0], [sin X, cos X]]: the
factors are only defined while cos X_t > 0, and the solver finds where that stops.

Run: python demos/04_rotation_split.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from roughflow import BlockPartition, TimeGrid, decompose_blocks, lift_linear, recompose, solve_linear_flow
from roughflow.linear_decomp import rotation_oracle
from roughflow.serialization import write_matrix_path

R = np.array([[0.0, -1.0], [1.0, 0.0]])
rp = lift_linear(TimeGrid.uniform(2.0, 8000), [1.0])
pair = decompose_blocks(R, BlockPartition(1, 1), rp, threshold=1e6)
flow = solve_linear_flow(R, rp)

print(" X_t    sec X (solver)  sec X (closed)   cos X (solver)")
oracle = rotation_oracle(pair.eta.times)
for idx in range(0, pair.eta.matrices.shape[0], 1000):
    print(f"{pair.eta.times[idx]:5.2f}   {pair.eta.matrices[idx, 0, 0]:13.6f}  {oracle.eta[idx, 0, 0]:13.6f}"
          f"   {pair.psi.matrices[idx, 1, 1]:13.6f}")

rep = pair.explosion
print(f"\nexplosion: {rep.reason} at t = {rep.time:.4f} (pi/2 = {np.pi / 2:.4f})")

# near the explosion eta has entries of size 1e6, so compare where |X_t| <= 1.4
early = decompose_blocks(R, BlockPartition(1, 1), lift_linear(TimeGrid.uniform(1.4, 5600), [1.0]))
reference = solve_linear_flow(R, lift_linear(TimeGrid.uniform(1.4, 5600), [1.0]))
print(f"recomposition residual for |X_t| <= 1.4: {recompose(early, reference):.2e}")

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out/rotation")
out.mkdir(parents=True, exist_ok=True)
for name, path in (("eta", pair.eta), ("psi", pair.psi), ("flow", flow)):
    write_matrix_path(out / f"{name}.csv", path)
print(f"matrix paths written to {out}/")

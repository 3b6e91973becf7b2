"""Davie-scheme flows and the numerical verifiers built on them.

Run: python demos/03_rde_flows.py
"""

import numpy as np

from roughflow import TimeGrid, lift_brownian, lift_linear, linear_vector_field, solve_rde
from roughflow.fields import rotation_field, skew_field
from roughflow.rde_solver import verify_change_of_coords, verify_composition, verify_manifold_invariance

ramp = lift_linear(TimeGrid.uniform(1.0, 2000), [1.0])

traj = solve_rde(rotation_field(), ramp, [1.0, 0.0], with_jacobian=True)
print("rotation field driven by X_t = t")
print(f"  y_1 = {traj.states[-1]}   (cos 1, sin 1) = {np.array([np.cos(1), np.sin(1)])}")
print(f"  D_x phi_1 =\n{traj.jacobians[-1]}")

# Geometric Brownian motion: log Y_T - log Y_0 = X_T - X_0 for a geometric driver.
bm = lift_brownian(21, 1, TimeGrid.uniform(1.0, 4000), refinement=4)
y = solve_rde(linear_vector_field([[1.0]]), bm, [1.0]).states[-1, 0]
print(f"\nexponential flow: log y_T = {np.log(y):.5f}, X_T = {bm.X[-1, 0] - bm.X[0, 0]:.5f}")

# g(Z_t) against g(Z_0) + int Dg F(Z) dX for g(x) = x^3 + x.
print("\nchange of coordinates, g(x) = x^3 + x")
for n in (250, 500, 1000, 2000):
    rp = lift_linear(TimeGrid.uniform(1.0, n), [1.0])
    r = verify_change_of_coords(lambda z: z**3 + z, lambda z: (3 * z**2 + 1)[..., None],
                                linear_vector_field([[0.8]]), rp, [0.7])
    print(f"  N = {n:4d}  residual {r:.2e}")

# V = Y_t(Z_t(y0)) against the independently integrated pushed-forward equation.
G = skew_field([[[0, -1], [1, 0]], [[0, -0.5], [0.5, 0]]])
H = linear_vector_field([np.eye(2) * 0.3, [[0.1, 0.2], [0.0, -0.2]]])
print("\ncomposition of two flows under a 2-d Brownian driver")
for n in (500, 1000, 2000, 4000):
    rp = lift_brownian(32, 2, TimeGrid.uniform(1.0, n), 4000 // n)
    print(f"  N = {n:4d}  residual {verify_composition(G, H, rp, [[1.0, 0.0], [0.2, 0.4]]):.2e}")

vf = skew_field([[[0, -1, 0], [1, 0, 0], [0, 0, 0]], [[0, 0, -1], [0, 0, 0], [1, 0, 0]]])
dev = verify_manifold_invariance(vf, lift_brownian(10, 2, TimeGrid.uniform(1.0, 4000)), [0.0, 0.6, 0.8])
print(f"\nskew fields on the sphere: max | |y_t| - 1 | = {dev:.2e}")

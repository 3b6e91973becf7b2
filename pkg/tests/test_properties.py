import numpy as np
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from roughflow.jordan_cascade import band_bounds, cascade_decompose, real_block_form
from roughflow.linear_decomp import BlockPartition, check_linearity_structure, decompose_blocks, rotation_oracle
from roughflow.rde_solver import linear_vector_field, step_davie
from roughflow.rough_core import (
    TimeGrid,
    chen_defect,
    geometricity_defect,
    lift_brownian,
    lift_linear,
    second_level_lookup,
)
from roughflow.rough_integral import ControlledPathGrid, integrate_against_rough

seeds = st.integers(min_value=0, max_value=2**32 - 1)
PROFILE = settings(max_examples=25, deadline=None)


@PROFILE
@given(seed=seeds, d=st.integers(1, 3), data=st.data())
def test_chen_identity(seed, d, data):
    rp = lift_brownian(seed, d, TimeGrid.uniform(1.0, 32), refinement=2)
    i = data.draw(st.integers(0, 32))
    u = data.draw(st.integers(i, 32))
    j = data.draw(st.integers(u, 32))
    assert chen_defect(rp, i, u, j) <= 1e-12
    assert geometricity_defect(rp, i, j) <= 1e-12


@PROFILE
@given(seed=seeds, data=st.data())
def test_integral_additivity(seed, data):
    rp = lift_brownian(seed, 2, TimeGrid.uniform(1.0, 40))
    Y = np.stack([np.sin(rp.X[:, 0]), np.cos(rp.X[:, 1])], -1)
    Yp = np.zeros((41, 2, 2))
    Yp[:, 0, 0] = np.cos(rp.X[:, 0])
    Yp[:, 1, 1] = -np.sin(rp.X[:, 1])
    cp = ControlledPathGrid(rp, Y, Yp)
    i = data.draw(st.integers(0, 40))
    u = data.draw(st.integers(i, 40))
    j = data.draw(st.integers(u, 40))
    whole = integrate_against_rough(cp, i, j)
    assert abs(integrate_against_rough(cp, i, u) + integrate_against_rough(cp, u, j) - whole) <= 1e-13


@PROFILE
@given(
    a=st.floats(-2, 2, allow_nan=False),
    h=st.floats(-0.5, 0.5, allow_nan=False),
    y=st.floats(-10, 10, allow_nan=False),
)
def test_scalar_step_formula(a, h, y):
    out = step_davie([y], linear_vector_field([[a]]), [h], [[h * h / 2]])
    assert_allclose(out[0], y * (1 + a * h + (a * h) ** 2 / 2), rtol=1e-13, atol=1e-13)


@PROFILE
@given(X=st.floats(-1.5, 1.5, allow_nan=False))
def test_rotation_oracle_product(X):
    o = rotation_oracle([X])
    R = np.array([[np.cos(X), -np.sin(X)], [np.sin(X), np.cos(X)]])
    assert_allclose(o.eta[0] @ o.psi[0], R, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=seeds, k=st.integers(1, 3))
def test_decomposition_structure_is_exact(seed, k):
    A = np.random.default_rng(seed).normal(size=(4, 4)) * 0.3
    pair = decompose_blocks(A, BlockPartition(k, 4 - k), lift_linear(TimeGrid.uniform(0.5, 50), [1.0]))
    assert check_linearity_structure(pair)


@settings(max_examples=15, deadline=None)
@given(seed=seeds, m=st.integers(2, 6))
def test_block_form_is_similarity(seed, m):
    A = np.random.default_rng(seed).normal(size=(m, m))
    b = real_block_form(A)
    assert sum(b.block_dims) == m
    assert_allclose(b.P @ b.T @ b.P.T, A, atol=1e-10 * max(1.0, np.abs(A).max()))
    keys = [ev.real.mean() for ev in b.block_eigenvalues()]
    assert all(x <= y + 1e-9 for x, y in zip(keys, keys[1:]))
    for dim, ev in zip(b.block_dims, b.block_eigenvalues()):
        assert (dim == 2) == bool(np.any(np.abs(ev.imag) > 0))


@settings(max_examples=8, deadline=None)
@given(seed=seeds)
def test_cascade_row_bands_exact(seed):
    A = np.random.default_rng(seed).normal(size=(4, 4))
    A /= np.linalg.norm(A, 2)
    cf = cascade_decompose(A, lift_linear(TimeGrid.uniform(1.0, 100), [1.0]))
    for i, f in enumerate(cf.factors):
        lo, hi = band_bounds(cf.basis, i)
        rows = np.delete(f.matrices, np.arange(lo, hi), axis=1)
        assert np.array_equal(rows, np.broadcast_to(np.delete(np.eye(4), np.arange(lo, hi), axis=0), rows.shape))


@PROFILE
@given(v=st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=3), n=st.integers(1, 30))
def test_linear_lift_second_level(v, n):
    rp = lift_linear(TimeGrid.uniform(1.0, n), v)
    v = np.asarray(v)
    assert_allclose(second_level_lookup(rp, 0, n), np.outer(v, v) / 2, atol=1e-12)

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from roughflow.rde_solver import linear_vector_field, solve_rde
from roughflow.rough_core import TimeGrid, lift_brownian, lift_linear, second_level_lookup
from roughflow.rough_integral import (
    COMPENSATED_THRESHOLD,
    ControlledPathGrid,
    controlled_from_function,
    cumulative_controlled_integral,
    cumulative_rough_integral,
    finite_difference_jacobian,
    integrate_against_controlled,
    integrate_against_rough,
    local_error_report,
    remainder,
)

from conftest import loglog_slope


def linear_time(n, T=1.0):
    return lift_linear(TimeGrid.uniform(T, n), [1.0])


def power(rp, p):
    x = rp.X[:, 0]
    return ControlledPathGrid(rp, x[:, None] ** p, p * x[:, None, None] ** (p - 1))


def smooth_integrand(rp):
    """``Y = (sin x1, cos x2 + x1 x2)`` as a linear map on R^2."""
    F = lambda x: np.array([np.sin(x[0]), np.cos(x[1]) + x[0] * x[1]])
    DF = lambda x: np.array([[np.cos(x[0]), 0.0], [x[1], -np.sin(x[1]) + x[0]]])
    return controlled_from_function(F, DF, rp)


class TestControlledPath:
    def test_shape_checks(self):
        rp = linear_time(4)
        with pytest.raises(ValueError):
            ControlledPathGrid(rp, np.zeros((4, 1)), np.zeros((4, 1, 1)))
        with pytest.raises(ValueError):
            ControlledPathGrid(rp, np.zeros((5, 2)), np.zeros((5, 2, 3)))

    def test_identity(self):
        rp = lift_brownian(1, 2, TimeGrid.uniform(1.0, 8))
        cp = controlled_from_function(lambda x: x, lambda x: np.eye(2), rp)
        assert_array_equal(cp.Y, rp.X)
        assert_array_equal(cp.Yp, np.broadcast_to(np.eye(2), (9, 2, 2)))


class TestRemainder:
    def test_constant(self):
        rp = lift_brownian(2, 2, TimeGrid.uniform(1.0, 8))
        cp = ControlledPathGrid(rp, np.full((9, 3), 2.0), np.zeros((9, 3, 2)))
        assert_array_equal(remainder(cp, 1, 6), 0.0)

    def test_linear_map_of_path(self):
        rp = lift_brownian(3, 2, TimeGrid.uniform(1.0, 8))
        A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
        cp = ControlledPathGrid(rp, rp.X @ A.T, np.broadcast_to(A, (9, 3, 2)))
        assert_allclose(remainder(cp, 2, 7), 0.0, atol=1e-14)

    def test_square(self):
        rp = lift_brownian(4, 1, TimeGrid.uniform(1.0, 16))
        cp = power(rp, 2)
        for i, j in [(0, 16), (3, 9)]:
            assert_allclose(remainder(cp, i, j)[0], (rp.X[j, 0] - rp.X[i, 0]) ** 2, atol=1e-14)

    def test_sine_taylor_bound(self):
        rp = linear_time(50)
        cp = controlled_from_function(np.sin, np.cos, rp)
        t = rp.grid.points
        for i in range(0, 50, 7):
            for j in range(i, 51, 5):
                assert abs(remainder(cp, i, j)[0]) <= 0.5 * (t[j] - t[i]) ** 2 + 1e-15

    def test_index_errors(self):
        cp = power(linear_time(4), 2)
        with pytest.raises(IndexError):
            remainder(cp, 3, 1)
        with pytest.raises(IndexError):
            remainder(cp, 0, 5)


class TestRoughIntegral:
    def test_constant_telescopes(self):
        rp = lift_brownian(5, 2, TimeGrid.uniform(1.0, 32))
        c = np.array([[1.5, -0.5]])
        cp = ControlledPathGrid(rp, np.broadcast_to(c, (33, 1, 2)), np.zeros((33, 1, 2, 2)))
        assert_allclose(integrate_against_rough(cp, 4, 20), c @ (rp.X[20] - rp.X[4]), atol=1e-14)

    def test_identity_integrand_is_exact(self):
        assert_allclose(integrate_against_rough(power(linear_time(100), 1)), 0.5, atol=1e-10)

    def test_square_integrand_second_order(self):
        ns = [100, 200, 400, 800]
        errs = [abs(integrate_against_rough(power(linear_time(n), 2)) - 1 / 3) for n in ns]
        # the compensated sum misses exactly 1/(3N^2) for this integrand
        assert_allclose(errs, [1 / (3 * n**2) for n in ns], rtol=1e-6)
        assert loglog_slope(1 / np.array(ns), errs) >= 1.9

    def test_shape_mismatch(self):
        rp = lift_brownian(1, 2, TimeGrid.uniform(1.0, 4))
        cp = ControlledPathGrid(rp, np.zeros((5, 3)), np.zeros((5, 3, 2)))
        with pytest.raises(ValueError):
            integrate_against_rough(cp)

    def test_additivity(self):
        rp = lift_brownian(6, 2, TimeGrid.uniform(1.0, 64))
        cp = smooth_integrand(rp)
        whole = integrate_against_rough(cp, 3, 60)
        parts = integrate_against_rough(cp, 3, 30) + integrate_against_rough(cp, 30, 60)
        assert_allclose(parts, whole, rtol=0, atol=1e-14)

    def test_linearity(self):
        rp = lift_brownian(7, 2, TimeGrid.uniform(1.0, 64))
        c1 = smooth_integrand(rp)
        c2 = ControlledPathGrid(rp, rp.X ** 2, 2 * rp.X[:, :, None] * np.eye(2))
        combo = ControlledPathGrid(rp, 2 * c1.Y - 3 * c2.Y, 2 * c1.Yp - 3 * c2.Yp)
        assert_allclose(
            integrate_against_rough(combo),
            2 * integrate_against_rough(c1) - 3 * integrate_against_rough(c2),
            atol=1e-13,
        )

    def test_cumulative_matches_pointwise(self):
        rp = lift_brownian(8, 2, TimeGrid.uniform(1.0, 32))
        cp = smooth_integrand(rp)
        cum = cumulative_rough_integral(cp)
        assert cum[0] == 0.0
        for j in (1, 17, 32):
            assert_allclose(cum[j], integrate_against_rough(cp, 0, j), atol=1e-14)

    def test_long_sums_use_compensation(self):
        n = COMPENSATED_THRESHOLD + 500
        cp = power(linear_time(n), 1)
        assert_allclose(integrate_against_rough(cp), 0.5, atol=1e-14)
        assert_allclose(cumulative_rough_integral(cp)[-1], 0.5, atol=1e-14)


class TestControlledIntegral:
    def test_specialization_is_bitwise(self):
        rp = lift_brownian(9, 2, TimeGrid.uniform(1.0, 64))
        Y = smooth_integrand(rp)
        Zx = ControlledPathGrid(rp, rp.X, np.broadcast_to(np.eye(2), (65, 2, 2)))
        a = integrate_against_rough(Y, 5, 50)
        b = integrate_against_controlled(Y, Zx, 5, 50)
        assert a.tobytes() == b.tobytes()

    def test_constant_integrand(self):
        rp = lift_brownian(10, 1, TimeGrid.uniform(1.0, 32))
        Z = power(rp, 3)
        Y = ControlledPathGrid(rp, np.full((33, 1), 2.5), np.zeros((33, 1, 1)))
        assert_allclose(integrate_against_controlled(Y, Z, 2, 30), 2.5 * (Z.Y[30, 0] - Z.Y[2, 0]), atol=1e-14)

    def test_base_mismatch(self):
        a, b = linear_time(4), linear_time(4)
        with pytest.raises(ValueError):
            integrate_against_controlled(power(a, 1), power(b, 1))

    def test_chain_rule_on_linear_rde(self):
        errs, ns = [], [250, 500, 1000, 2000]
        for n in ns:
            rp = lift_linear(TimeGrid.uniform(1.0, n), [1.0])
            z = solve_rde(linear_vector_field([[[0.6]]]), rp, [1.0]).states
            Z = ControlledPathGrid(rp, z, 0.6 * z[:, :, None])
            I = integrate_against_controlled(Z, Z)
            errs.append(abs(I - 0.5 * (z[-1, 0] ** 2 - z[0, 0] ** 2)))
        assert loglog_slope(1 / np.array(ns), errs) >= 1.5
        assert_allclose(cumulative_controlled_integral(Z, Z)[-1], I, atol=1e-14)

    def test_chain_rule_brownian_driver(self):
        rp = lift_brownian(11, 1, TimeGrid.uniform(1.0, 2000), refinement=4)
        z = solve_rde(linear_vector_field([[[0.6]]]), rp, [1.0]).states
        Z = ControlledPathGrid(rp, z, 0.6 * z[:, :, None])
        assert abs(integrate_against_controlled(Z, Z) - 0.5 * (z[-1, 0] ** 2 - 1.0)) <= 1e-3


class TestLocalError:
    def test_constant_zero_defect(self):
        rp = lift_brownian(12, 2, TimeGrid.uniform(1.0, 16))
        cp = ControlledPathGrid(rp, np.ones((17, 1, 2)), np.zeros((17, 1, 2, 2)))
        assert local_error_report(cp, 0, 16).defect <= 1e-15

    def test_identity_within_envelope(self):
        rp = lift_brownian(13, 2, TimeGrid.uniform(1.0, 64), refinement=4)
        cp = smooth_integrand(rp)
        for level in range(1, 6):
            size = 64 >> level
            for s in range(0, 64, size):
                rep = local_error_report(cp, s, s + size)
                assert rep.defect <= rep.bound

    def test_dyadic_scaling(self):
        rp = lift_linear(TimeGrid.uniform(1.0, 256), [1.0, 0.5])
        cp = smooth_integrand(rp)
        sizes = [256, 128, 64, 32, 16]
        defects = [local_error_report(cp, 0, s).defect for s in sizes]
        assert loglog_slope(sizes, defects) >= 3 * 0.5 - 0.2


def test_finite_difference_jacobian():
    f = lambda x: np.array([x[0] * x[1], np.sin(x[0])])
    x = np.array([0.3, -1.2])
    assert_allclose(finite_difference_jacobian(f, x), [[x[1], x[0]], [np.cos(x[0]), 0.0]], atol=1e-8)

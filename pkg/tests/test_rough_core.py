import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad

from roughflow.rough_core import (
    RoughPathGrid,
    TimeGrid,
    box_muller_normals,
    chen_defect,
    geometricity_defect,
    holder_norms,
    lift_brownian,
    lift_linear,
    lift_smooth,
    refine_grid,
    restrict,
    second_level_lookup,
)

from conftest import loglog_slope, smooth_lift


def parabola(t):
    return np.stack([t, t**2], axis=-1)


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(2.0, 4)
        assert_allclose(g.points, [0, 0.5, 1, 1.5, 2])
        assert g.T == 2.0 and g.n_steps == 4 and len(g) == 5

    @pytest.mark.parametrize("pts", [[0.0], [0.1, 1.0], [0.0, 1.0, 1.0], [0.0, 2.0, 1.0]])
    def test_rejects_bad_points(self, pts):
        with pytest.raises(ValueError):
            TimeGrid(np.array(pts))


class TestRoughPathGrid:
    def test_rejects_alpha_outside_range(self):
        g = TimeGrid.uniform(1.0, 2)
        with pytest.raises(ValueError):
            RoughPathGrid(g, np.zeros((3, 1)), np.zeros((2, 1, 1)), alpha=0.3)

    def test_rejects_length_mismatch(self):
        g = TimeGrid.uniform(1.0, 2)
        with pytest.raises(ValueError):
            RoughPathGrid(g, np.zeros((3, 1)), np.zeros((3, 1, 1)))


class TestSecondLevel:
    def test_diagonal_is_zero(self):
        rp = lift_brownian(3, 2, TimeGrid.uniform(1.0, 16))
        assert_array_equal(second_level_lookup(rp, 5, 5), np.zeros((2, 2)))

    def test_scalar_linear(self):
        rp = lift_linear(TimeGrid.uniform(1.0, 10), [1.0])
        for i, j in [(0, 10), (2, 7), (3, 4)]:
            t = rp.grid.points
            assert_allclose(second_level_lookup(rp, i, j)[0, 0], (t[j] - t[i]) ** 2 / 2, rtol=1e-13)

    def test_parabola_iterated_integrals(self):
        rp = smooth_lift(parabola, 1.0, 32, refinement=64)
        XX = second_level_lookup(rp, 0, 32)
        # int r d(r^2) = 2/3, int r^2 dr = 1/3
        assert_allclose(XX[0, 1], 2 / 3, atol=1e-4)
        assert_allclose(XX[1, 0], 1 / 3, atol=1e-4)

    def test_out_of_range(self):
        rp = lift_linear(TimeGrid.uniform(1.0, 4), [1.0])
        with pytest.raises(IndexError):
            second_level_lookup(rp, 0, 5)
        with pytest.raises(IndexError):
            second_level_lookup(rp, 3, 1)


class TestChen:
    def test_zero_on_lifts(self):
        rp = lift_brownian(11, 3, TimeGrid.uniform(1.0, 64), refinement=8)
        rng = np.random.default_rng(0)
        for _ in range(200):
            i, u, j = np.sort(rng.integers(0, 65, 3))
            assert chen_defect(rp, int(i), int(u), int(j)) <= 1e-12

    def test_degenerate_split(self):
        rp = lift_brownian(2, 2, TimeGrid.uniform(1.0, 8))
        assert chen_defect(rp, 3, 3, 7) <= 1e-15

    def test_corrupted_tensor_is_detected(self):
        # A second level assembled independently of the stored cells violates Chen by the corruption.
        rp = lift_brownian(5, 2, TimeGrid.uniform(1.0, 8))
        eps = 1e-3
        XX = rp.XX_step.copy()
        XX[4, 0, 1] += eps
        bad = RoughPathGrid(rp.grid, rp.X, XX, rp.alpha)
        lhs = second_level_lookup(rp, 2, 7)
        rhs = second_level_lookup(bad, 2, 4) + second_level_lookup(bad, 4, 7) + np.outer(
            rp.X[4] - rp.X[2], rp.X[7] - rp.X[4]
        )
        assert_allclose(np.linalg.norm(lhs - rhs), eps, rtol=1e-9)
        assert chen_defect(bad, 2, 4, 7) <= 1e-15


class TestGeometricity:
    def test_scalar_exact(self):
        rp = lift_linear(TimeGrid.uniform(1.0, 50), [1.0])
        assert geometricity_defect(rp, 0, 50) <= 1e-15

    def test_parabola_refinement_64(self):
        rp = smooth_lift(parabola, 1.0, 16, refinement=64)
        assert geometricity_defect(rp, 0, 16) <= 1e-4

    def test_brownian_round_off(self):
        rp = lift_brownian(7, 3, TimeGrid.uniform(1.0, 128), refinement=4)
        rng = np.random.default_rng(1)
        for _ in range(50):
            i, j = np.sort(rng.integers(0, 129, 2))
            assert geometricity_defect(rp, int(i), int(j)) <= 1e-12


class TestLiftSmooth:
    def test_constant_path(self):
        coarse = TimeGrid.uniform(1.0, 4)
        fine = refine_grid(coarse, 8)
        rp = lift_smooth(fine, np.full((fine.size, 2), 3.0), coarse)
        assert_array_equal(rp.XX_step, 0.0)
        assert_array_equal(rp.X, 3.0)

    def test_linear_exact(self):
        coarse = TimeGrid.uniform(1.0, 10)
        fine = refine_grid(coarse, 64)
        rp = lift_smooth(fine, fine, coarse)
        assert_allclose(rp.XX_step[:, 0, 0], 0.01 / 2, atol=1e-12)

    def test_circle_levy_area_against_quadrature(self):
        rp = smooth_lift(lambda t: np.stack([np.cos(t), np.sin(t)], -1), 1.0, 8, refinement=64)
        XX = second_level_lookup(rp, 0, 8)
        # area = 1/2 int (X^1_{0r} dX^2 - X^2_{0r} dX^1)
        integrand = lambda r: 0.5 * ((np.cos(r) - 1) * np.cos(r) + np.sin(r) * np.sin(r))
        area, _ = quad(integrand, 0, 1, epsabs=1e-13)
        assert_allclose(0.5 * (XX[0, 1] - XX[1, 0]), area, atol=1e-4)

    def test_not_a_refinement(self):
        coarse = TimeGrid.uniform(1.0, 4)
        with pytest.raises(ValueError):
            lift_smooth(np.linspace(0, 1, 7), np.zeros(7), coarse)

    def test_dimension_mismatch(self):
        coarse = TimeGrid.uniform(1.0, 4)
        with pytest.raises(ValueError):
            lift_smooth(refine_grid(coarse, 2), np.zeros((5, 2)), coarse)

    def test_second_level_converges_at_order_two(self):
        def path(t):
            return np.stack([np.sin(3 * t), np.cos(2 * t) * t], -1)

        # oracle: int_0^1 X^0_{0r} dX^1_r by adaptive quadrature
        x0 = lambda r: np.sin(3 * r)
        dx1 = lambda r: -2 * np.sin(2 * r) * r + np.cos(2 * r)
        exact, _ = quad(lambda r: x0(r) * dx1(r), 0, 1, epsabs=1e-14)
        errs = []
        for ref in (16, 32, 64):
            rp = smooth_lift(path, 1.0, 4, refinement=ref)
            errs.append(abs(second_level_lookup(rp, 0, 4)[0, 1] - exact))
        assert loglog_slope([1 / 16, 1 / 32, 1 / 64], errs) >= 1.9


class TestBrownian:
    def test_deterministic(self):
        g = TimeGrid.uniform(1.0, 64)
        a = lift_brownian(42, 2, g, refinement=4)
        b = lift_brownian(42, 2, g, refinement=4)
        assert a.X.tobytes() == b.X.tobytes()
        assert a.XX_step.tobytes() == b.XX_step.tobytes()

    def test_seed_changes_output(self):
        g = TimeGrid.uniform(1.0, 16)
        assert not np.array_equal(lift_brownian(1, 1, g).X, lift_brownian(2, 1, g).X)

    def test_one_dimensional_geometric(self):
        rp = lift_brownian(9, 1, TimeGrid.uniform(1.0, 256), refinement=2)
        assert geometricity_defect(rp, 0, 256) <= 1e-12
        assert_allclose(rp.XX_step[:, 0, 0], np.diff(rp.X[:, 0]) ** 2 / 2, atol=1e-15)

    def test_box_muller_moments(self):
        z = box_muller_normals(0, 200_000)
        assert abs(z.mean()) < 4 / np.sqrt(z.size)
        assert abs(z.var() - 1) < 0.02

    def test_levy_area_mean_zero(self):
        # 10^4 independent samples in one batch via distinct seeds would be slow; one long
        # stream of independent cells gives the same Monte Carlo test of the mean.
        rp = lift_brownian(123, 2, TimeGrid.uniform(1.0, 10_000), refinement=4)
        area = 0.5 * (rp.XX_step[:, 0, 1] - rp.XX_step[:, 1, 0]) / np.sqrt(1e-4 ** 2)
        se = area.std(ddof=1) / np.sqrt(area.size)
        assert abs(area.mean()) <= 3 * se

    def test_rejects_bad_parameters(self):
        g = TimeGrid.uniform(1.0, 4)
        with pytest.raises(ValueError):
            lift_brownian(0, 0, g)
        with pytest.raises(ValueError):
            lift_brownian(0, 1, g, refinement=0)
        with pytest.raises(ValueError):
            lift_brownian(-1, 1, g)


class TestHolder:
    def test_constant_path(self):
        g = TimeGrid.uniform(1.0, 8)
        rp = RoughPathGrid(g, np.ones((9, 2)), np.zeros((8, 2, 2)))
        h = holder_norms(rp)
        assert h.x_norm == 0.0 and h.xx_norm == 0.0

    def test_linear_path(self):
        rp = lift_linear(TimeGrid.uniform(1.0, 20), [1.0])
        h = holder_norms(rp)
        assert_allclose(h.x_norm, 1.0, rtol=1e-12)
        assert_allclose(h.xx_norm, 0.5, rtol=1e-12)

    def test_brute_force_scan(self):
        rp = lift_brownian(4, 2, TimeGrid.uniform(1.0, 24))
        t, a = rp.grid.points, rp.alpha
        bx = bxx = 0.0
        for i in range(len(t)):
            for j in range(i + 1, len(t)):
                dt = t[j] - t[i]
                bx = max(bx, np.linalg.norm(rp.X[j] - rp.X[i]) / dt**a)
                bxx = max(bxx, np.linalg.norm(second_level_lookup(rp, i, j)) / dt ** (2 * a))
        h = holder_norms(rp)
        assert_allclose([h.x_norm, h.xx_norm], [bx, bxx], rtol=1e-12)


def test_restrict_keeps_floats():
    rp = lift_brownian(8, 2, TimeGrid.uniform(1.0, 10))
    sub = restrict(rp, 3, 8)
    assert_array_equal(sub.X, rp.X[3:9])
    assert_array_equal(sub.XX_step, rp.XX_step[3:8])
    assert sub.grid.points[0] == 0.0

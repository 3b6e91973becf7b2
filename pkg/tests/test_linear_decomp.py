import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.linalg import expm

from roughflow.linear_decomp import (
    BlockPartition,
    DecompositionPair,
    ExplosionReport,
    LinearFlowPath,
    check_linearity_structure,
    decompose_blocks,
    detect_explosion,
    linear_step_matrix,
    recompose,
    rotation_oracle,
    solve_linear_flow,
    split_blocks,
)
from roughflow.rough_core import TimeGrid, lift_brownian, lift_linear

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def ramp(T, n):
    return lift_linear(TimeGrid.uniform(T, n), [1.0])


def random_matrix(rng, m, norm):
    A = rng.normal(size=(m, m))
    return A * norm / np.linalg.norm(A, 2)


class TestPartition:
    def test_sizes(self):
        assert BlockPartition(2, 3).m == 5

    @pytest.mark.parametrize("k,ell", [(0, 2), (2, 0), (1.5, 1)])
    def test_rejects(self, k, ell):
        with pytest.raises(ValueError):
            BlockPartition(k, ell)

    def test_split_blocks_shape_check(self):
        with pytest.raises(ValueError):
            split_blocks(np.eye(3), BlockPartition(1, 1))


class TestLinearFlow:
    def test_zero(self):
        flow = solve_linear_flow(np.zeros((3, 3)), lift_brownian(1, 1, TimeGrid.uniform(1.0, 20)))
        assert_array_equal(flow.matrices, np.broadcast_to(np.eye(3), (21, 3, 3)))

    def test_rotation(self):
        flow = solve_linear_flow(ROT, ramp(1.0, 2000))
        assert_allclose(flow.matrices[-1] @ [1.0, 0.0], [np.cos(1), np.sin(1)], atol=1e-4)
        X = flow.times
        assert_allclose(flow.matrices[:, 0, 0], np.cos(X), atol=1e-4)
        assert_allclose(flow.matrices[:, 1, 0], np.sin(X), atol=1e-4)

    def test_diagonal(self):
        flow = solve_linear_flow(np.diag([1.0, 2.0]), ramp(1.0, 2000))
        t = flow.times
        assert_allclose(flow.matrices[:, 0, 0], np.exp(t), rtol=1e-6)
        assert_allclose(flow.matrices[:, 1, 1], np.exp(2 * t), rtol=1e-6)

    def test_step_ordering_non_commuting(self):
        # second-order term sum_{ij} A_j A_i XX^{ij} matches the Taylor term of the flow
        A = np.array([[[0, 1.0], [0, 0]], [[0, 0], [1.0, 0]]])
        dX = np.array([0.1, 0.2])
        XX = np.array([[0.005, 0.03], [-0.01, 0.02]])
        S = linear_step_matrix(A, dX, XX)
        expected = np.eye(2) + A[0] * 0.1 + A[1] * 0.2
        for i in range(2):
            for j in range(2):
                expected = expected + A[j] @ A[i] * XX[i, j]
        assert_allclose(S, expected, atol=1e-15)

    def test_brownian_commuting_matches_exponential(self):
        rp = lift_brownian(3, 2, TimeGrid.uniform(1.0, 4000))
        A = np.array([np.diag([0.5, -0.2]), np.diag([0.1, 0.3])])
        flow = solve_linear_flow(A, rp)
        X = rp.X[-1] - rp.X[0]
        assert_allclose(flow.matrices[-1], expm(A[0] * X[0] + A[1] * X[1]), rtol=1e-3)

    def test_matrix_count_mismatch(self):
        with pytest.raises(ValueError):
            solve_linear_flow(np.zeros((2, 2, 2)), ramp(1.0, 4))


class TestDecompose:
    def test_zero(self):
        pair = decompose_blocks(np.zeros((3, 3)), BlockPartition(1, 2), ramp(1.0, 10))
        assert_array_equal(pair.eta.matrices, np.broadcast_to(np.eye(3), (11, 3, 3)))
        assert_array_equal(pair.psi.matrices, np.broadcast_to(np.eye(3), (11, 3, 3)))
        assert not detect_explosion(pair).exploded

    def test_rotation_closed_form_at_half(self):
        pair = decompose_blocks(ROT, BlockPartition(1, 1), ramp(0.5, 2000))
        eta, psi = pair.eta.matrices[-1], pair.psi.matrices[-1]
        assert_allclose(
            [eta[0, 0], eta[0, 1], psi[1, 0], psi[1, 1]],
            [1.139494, -0.546302, 0.479426, 0.877583],
            atol=1e-4,
        )

    def test_rotation_matches_oracle_along_path(self):
        pair = decompose_blocks(ROT, BlockPartition(1, 1), ramp(1.4, 4000))
        oracle = rotation_oracle(pair.eta.times)
        assert_allclose(pair.eta.matrices, oracle.eta, atol=1e-3)
        assert_allclose(pair.psi.matrices, oracle.psi, atol=1e-4)

    def test_upper_triangular_decouples(self):
        rng = np.random.default_rng(5)
        A = random_matrix(rng, 4, 1.0)
        A[2:, :2] = 0.0
        pair = decompose_blocks(A, BlockPartition(2, 2), ramp(1.0, 2000))
        assert not detect_explosion(pair).exploded
        t = pair.eta.times
        for idx in (500, 2000):
            assert_allclose(pair.eta.matrices[idx, :2, :2], expm(A[:2, :2] * t[idx]), atol=1e-6)
            assert_allclose(pair.psi.matrices[idx, 2:, 2:], expm(A[2:, 2:] * t[idx]), atol=1e-6)
        assert_array_equal(pair.psi.matrices[:, 2:, :2], 0.0)
        bound = np.exp(np.linalg.norm(A, 2) * 1.0)
        assert np.abs(pair.eta.matrices).max() <= bound
        assert np.abs(pair.psi.matrices).max() <= bound

    def test_random_recomposition(self):
        rng = np.random.default_rng(6)
        rp = ramp(1.0, 4000)
        for _ in range(3):
            A = random_matrix(rng, 4, 1.0)
            pair = decompose_blocks(A, BlockPartition(2, 2), rp)
            assert recompose(pair, solve_linear_flow(A, rp)) <= 1e-4

    def test_structure_is_exact(self):
        rng = np.random.default_rng(7)
        pair = decompose_blocks(random_matrix(rng, 3, 1.0), BlockPartition(1, 2), ramp(1.0, 200))
        assert check_linearity_structure(pair)
        assert_array_equal(pair.eta.matrices[0], np.eye(3))
        assert_array_equal(pair.psi.matrices[0], np.eye(3))

    def test_rejects_multidimensional_driver(self):
        with pytest.raises(ValueError):
            decompose_blocks(ROT, BlockPartition(1, 1), lift_brownian(0, 2, TimeGrid.uniform(1.0, 4)))


class TestExplosion:
    def test_rotation_explodes_near_half_pi(self):
        pair = decompose_blocks(ROT, BlockPartition(1, 1), ramp(2.0, 8000), threshold=1e6)
        rep = detect_explosion(pair)
        assert rep.exploded
        assert abs(rep.time - np.pi / 2) <= 0.05
        assert pair.eta.matrices.shape[0] == rep.first_index
        assert np.abs(pair.eta.matrices).max() <= 1e6

    def test_localization_sharpens_with_threshold(self):
        gaps = []
        for thr in (1e2, 1e4, 1e6):
            rep = decompose_blocks(ROT, BlockPartition(1, 1), ramp(2.0, 8000), threshold=thr).explosion
            gaps.append(abs(rep.time - np.pi / 2))
        # once the threshold is large the gap is limited by the grid spacing 2.5e-4
        assert gaps[0] > 10 * max(gaps[1], gaps[2])
        assert max(gaps[1], gaps[2]) <= 4 * 2.0 / 8000

    def test_ill_conditioned_lower_block_trips(self):
        # F4 = cos X loses invertibility exactly where the top factor blows up; a
        # huge threshold leaves only the conditioning guard
        rep = decompose_blocks(ROT, BlockPartition(1, 1), ramp(2.0, 8000), threshold=1e300).explosion
        assert rep.exploded and rep.reason in ("F4 ill-conditioned", "non-finite entry")


class TestRotationOracle:
    def test_identity_at_zero(self):
        o = rotation_oracle([0.0])
        assert_array_equal(o.eta[0], np.eye(2))
        assert_array_equal(o.psi[0], np.eye(2))

    def test_product_is_rotation(self):
        X = np.linspace(-1.5, 1.5, 31)
        o = rotation_oracle(X)
        R = np.stack([[np.cos(X), -np.sin(X)], [np.sin(X), np.cos(X)]]).transpose(2, 0, 1)
        assert_allclose(o.eta @ o.psi, R, atol=1e-13)

    def test_singular_flag(self):
        o = rotation_oracle([np.pi / 2, -np.pi / 2, 3 * np.pi / 2, 0.3])
        assert_array_equal(o.singular, [True, True, True, False])
        assert np.isnan(o.eta[0, 0, 0])

    def test_oracle_pair_has_required_shape(self):
        X = np.linspace(0, 1, 5)
        o = rotation_oracle(X)
        g = TimeGrid(X)
        pair = DecompositionPair(LinearFlowPath(g, o.eta), LinearFlowPath(g, o.psi), BlockPartition(1, 1),
                                 ExplosionReport(False, None, np.inf))
        assert check_linearity_structure(pair)


def test_structure_check_rejects_hand_built_violation():
    g = TimeGrid.uniform(1.0, 1)
    eta = np.broadcast_to(np.eye(2), (2, 2, 2)).copy()
    eta[1, 1, 0] = 1e-300
    pair = DecompositionPair(LinearFlowPath(g, eta), LinearFlowPath(g, np.broadcast_to(np.eye(2), (2, 2, 2))),
                             BlockPartition(1, 1), ExplosionReport(False, None, 1e6))
    assert not check_linearity_structure(pair)


def test_recompose_grid_mismatch():
    pair = decompose_blocks(ROT, BlockPartition(1, 1), ramp(1.0, 10))
    with pytest.raises(ValueError):
        recompose(pair, solve_linear_flow(ROT, ramp(1.0, 12)))

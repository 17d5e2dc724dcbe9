import numpy as np
import pytest

from invgame.matrix_game import (
    FeatureModel,
    MatrixGameSpec,
    PolicyPair,
    QreConvergenceError,
    game_value,
    payoff_from_features,
    qre_residual,
    solve_qre,
)

from .oracles import payoff_by_scalar_loops, qre_2x2_bisection, simplex_mesh


def seeded_features(m, n, d, seed, unit_norm=True):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    feats = rng.standard_normal((m, n, d))
    if unit_norm:
        feats /= np.linalg.norm(feats, axis=2, keepdims=True)
    return feats


class TestSpecValidation:
    def test_rejects_tiny_action_sets(self):
        with pytest.raises(ValueError):
            MatrixGameSpec(np.zeros((1, 3)), eta=1.0)

    def test_rejects_nonpositive_eta(self):
        with pytest.raises(ValueError):
            MatrixGameSpec(np.zeros((2, 2)), eta=0.0)

    def test_rejects_nonfinite_payoff(self):
        q = np.zeros((2, 2))
        q[0, 0] = np.inf
        with pytest.raises(ValueError):
            MatrixGameSpec(q, eta=1.0)

    def test_policy_pair_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            PolicyPair(np.array([0.5, 0.6]), np.array([0.5, 0.5]))

    def test_policy_pair_rejects_negative(self):
        with pytest.raises(ValueError):
            PolicyPair(np.array([1.5, -0.5]), np.array([0.5, 0.5]))


class TestPayoffFromFeatures:
    def test_zero_theta_gives_zero_matrix(self):
        model = FeatureModel(seeded_features(3, 4, 2, 0), np.zeros(2))
        assert np.all(payoff_from_features(model) == 0.0)

    def test_constant_feature(self):
        model = FeatureModel(np.ones((2, 3, 1)), np.array([0.8]))
        assert np.allclose(payoff_from_features(model), 0.8)

    def test_setup_i_matches_scalar_loop_oracle(self):
        feats = seeded_features(4, 6, 2, seed=11)
        theta = np.array([0.8, -0.6])
        model = FeatureModel(feats, theta, norm_sq_cap=4.0)
        expected = payoff_by_scalar_loops(feats, theta)
        assert np.allclose(payoff_from_features(model), expected, atol=1e-14)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FeatureModel(seeded_features(2, 2, 3, 0), np.zeros(2))


class TestSolveQre:
    def test_zero_payoff_gives_uniform(self):
        spec = MatrixGameSpec(np.zeros((3, 5)), eta=1.7)
        pair = solve_qre(spec)
        assert np.allclose(pair.mu, 1 / 3, atol=1e-12)
        assert np.allclose(pair.nu, 1 / 5, atol=1e-12)

    def test_matching_pennies_uniform(self):
        spec = MatrixGameSpec(np.array([[1.0, -1.0], [-1.0, 1.0]]), eta=1.0)
        pair = solve_qre(spec)
        assert np.allclose(pair.mu, 0.5, atol=1e-12)
        assert np.allclose(pair.nu, 0.5, atol=1e-12)

    def test_2x2_against_bisection_oracle(self):
        q = np.array([[1.0, 0.0], [0.0, 0.0]])
        spec = MatrixGameSpec(q, eta=1.0)
        pair = solve_qre(spec, tol=1e-13)
        mu_star, nu_star = qre_2x2_bisection(q, eta=1.0)
        assert np.abs(pair.mu - mu_star).max() < 1e-10
        assert np.abs(pair.nu - nu_star).max() < 1e-10

    def test_setup_i_residual_at_tolerance(self):
        feats = seeded_features(4, 6, 2, seed=3)
        q = feats @ np.array([0.8, -0.6])
        spec = MatrixGameSpec(q, eta=0.5)
        pair = solve_qre(spec, tol=1e-12)
        assert qre_residual(spec, pair) <= 1e-10

    def test_role_swap_symmetry(self):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(21)))
        q = rng.standard_normal((4, 3))
        pair = solve_qre(MatrixGameSpec(q, eta=0.8))
        swapped = solve_qre(MatrixGameSpec(-q.T, eta=0.8))
        assert np.abs(swapped.mu - pair.nu).max() < 1e-9
        assert np.abs(swapped.nu - pair.mu).max() < 1e-9

    def test_constant_shift_invariance(self):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(22)))
        q = rng.standard_normal((3, 4))
        pair = solve_qre(MatrixGameSpec(q, eta=1.2))
        shifted = solve_qre(MatrixGameSpec(q + 3.7, eta=1.2))
        assert np.abs(shifted.mu - pair.mu).max() < 1e-9
        assert np.abs(shifted.nu - pair.nu).max() < 1e-9

    def test_strictly_positive_outputs(self):
        q = np.array([[5.0, -5.0, 0.0], [0.0, 2.0, -3.0]])
        pair = solve_qre(MatrixGameSpec(q, eta=2.0))
        assert pair.mu.min() > 0
        assert pair.nu.min() > 0

    def test_strongly_scaled_payoffs_converge_via_damping(self):
        # near-deterministic equilibrium regime: plain damping 0.5 cycles and
        # the stall-triggered halving has to carry the iteration
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(124)))
        q = rng.standard_normal((4, 4)) * 20
        spec = MatrixGameSpec(q, eta=2.0)
        pair = solve_qre(spec, tol=1e-12)
        assert qre_residual(spec, pair) <= 1e-10

    def test_nonconvergence_reports_residual(self):
        spec = MatrixGameSpec(np.array([[7.0, -2.0], [0.5, 3.0]]), eta=2.0)
        with pytest.raises(QreConvergenceError) as err:
            solve_qre(spec, tol=1e-12, max_iter=3)
        assert err.value.iterations == 3
        assert err.value.residual > 0


class TestQreResidual:
    def test_uniform_pair_exact_for_zero_payoff(self):
        spec = MatrixGameSpec(np.zeros((2, 2)), eta=1.0)
        pair = PolicyPair(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert qre_residual(spec, pair) <= 1e-15

    def test_uniform_pair_positive_when_rows_differ(self):
        spec = MatrixGameSpec(np.array([[1.0, 0.0], [0.0, 0.0]]), eta=1.0)
        pair = PolicyPair(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert qre_residual(spec, pair) > 1e-3

    def test_dimension_mismatch(self):
        spec = MatrixGameSpec(np.zeros((2, 3)), eta=1.0)
        pair = PolicyPair(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            qre_residual(spec, pair)


class TestGameValue:
    def test_zero_payoff_uniform_value_zero(self):
        spec = MatrixGameSpec(np.zeros((2, 2)), eta=1.0)
        pair = PolicyPair(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert game_value(spec, pair) == pytest.approx(0.0, abs=1e-15)

    def test_point_mass_row_against_uniform(self):
        spec = MatrixGameSpec(np.zeros((2, 2)), eta=1.0)
        pair = PolicyPair(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        assert game_value(spec, pair) == pytest.approx(-np.log(2))

    def test_qre_nu_minimizes_over_nu_mesh(self):
        # nu* is the exact minimizer of the objective given mu*, so the QRE
        # value lower-bounds the objective at every grid point of the simplex
        feats = seeded_features(4, 6, 2, seed=5)
        q = feats @ np.array([0.8, -0.6])
        spec = MatrixGameSpec(q, eta=0.5)
        pair = solve_qre(spec)
        value = game_value(spec, pair)
        grid_values = [
            game_value(spec, PolicyPair(pair.mu, nu)) for nu in simplex_mesh(6, 3)
        ]
        assert value <= min(grid_values) + 1e-12

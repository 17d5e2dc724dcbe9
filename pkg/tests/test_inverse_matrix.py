import numpy as np
import pytest

from invgame.experiments import (
    SETUP2_THETA,
    kappa_rule,
    setup1_model,
    setup2_model,
)
from invgame.inverse_matrix import (
    ConfidenceSet,
    FeasibleSet,
    PartialIdentifiabilityError,
    build_confidence_set,
    build_linear_system,
    feasible_set_from_policies,
    hausdorff_estimate,
    least_squares_theta,
    min_norm_theta,
    rank_condition,
    reconstruct_payoff,
    sample_feasible,
    theoretical_kappa,
    tv_error_bound,
)
from invgame.matrix_game import MatrixGameSpec, PolicyPair, payoff_from_features, solve_qre
from invgame.sampling import frequency_estimate_matrix, sample_matrix_actions, stream


def setup1_exact_system(seed=0):
    model = setup1_model(stream(seed))
    spec = MatrixGameSpec(payoff_from_features(model), 0.5)
    pair = solve_qre(spec, tol=1e-13)
    return model, build_linear_system(model.features, pair, 0.5)


class TestBuildLinearSystem:
    def test_uniform_policies_zero_rhs(self):
        model = setup1_model(stream(1))
        pair = PolicyPair(np.full(4, 0.25), np.full(6, 1 / 6))
        system = build_linear_system(model.features, pair, 0.5)
        assert np.allclose(system.y, 0.0)

    def test_setup1_shape(self):
        _, system = setup1_exact_system()
        assert system.X.shape == (8, 2)

    def test_exact_qre_satisfied_by_true_theta(self):
        model, system = setup1_exact_system(seed=2)
        assert np.linalg.norm(system.X @ model.theta - system.y) <= 1e-9

    def test_zero_probability_rejected(self):
        model = setup1_model(stream(3))
        mu = np.array([1.0, 0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            build_linear_system(
                model.features, PolicyPair(mu, np.full(6, 1 / 6)), 0.5
            )


class TestRankCondition:
    def test_more_parameters_than_rows(self):
        rng = stream(4)
        x = rng.standard_normal((8, 9))
        ok, rank = rank_condition(x, 9)
        assert not ok and rank <= 8

    def test_duplicate_columns(self):
        rng = stream(5)
        col = rng.standard_normal((6, 1))
        ok, rank = rank_condition(np.hstack([col, col]), 2)
        assert not ok and rank == 1

    def test_setup1_full_rank(self):
        _, system = setup1_exact_system(seed=6)
        ok, rank = rank_condition(system.X, 2)
        assert ok and rank == 2

    def test_constant_feature_produces_zero_column(self):
        # appending a constant feature direction never changes the
        # baseline-difference rows, so the extra column is zero and the
        # augmented system cannot be full rank
        model = setup1_model(stream(7))
        augmented = np.concatenate(
            [model.features, np.full((4, 6, 1), 0.3)], axis=2
        )
        pair = solve_qre(MatrixGameSpec(payoff_from_features(model), 0.5))
        system = build_linear_system(augmented, pair, 0.5)
        assert np.allclose(system.X[:, 2], 0.0)
        ok, _ = rank_condition(system.X, 3)
        assert not ok


class TestLeastSquares:
    def test_identity_system(self):
        from invgame.inverse_matrix import LinearSystem

        system = LinearSystem(np.eye(2), np.array([0.8, -0.6]), 1.0)
        assert np.allclose(least_squares_theta(system), [0.8, -0.6])

    def test_exact_setup1_recovers_theta(self):
        model, system = setup1_exact_system(seed=8)
        assert np.linalg.norm(least_squares_theta(system) - model.theta) <= 1e-8

    def test_singular_system_raises(self):
        from invgame.inverse_matrix import LinearSystem

        x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        system = LinearSystem(x, np.ones(3), 1.0)
        with pytest.raises(PartialIdentifiabilityError):
            least_squares_theta(system)

    def test_empirical_setup1_close_at_large_n(self):
        model = setup1_model(stream(9))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        truth = solve_qre(spec, tol=1e-12)
        hits = 0
        for rep in range(40):
            data = sample_matrix_actions(truth, 10**6, 99, rep)
            est = frequency_estimate_matrix(data, 4, 6)
            pair = PolicyPair(est.mu_hat, est.nu_hat)
            theta = least_squares_theta(
                build_linear_system(model.features, pair, 0.5)
            )
            hits += np.linalg.norm(theta - model.theta) <= 0.05
        assert hits >= 38  # 95% of reps


class TestMinNorm:
    def test_wide_system_minimal_preimage(self):
        from invgame.inverse_matrix import LinearSystem

        system = LinearSystem(np.array([[1.0, 0.0]]), np.array([1.0]), 1.0)
        assert np.allclose(min_norm_theta(system), [1.0, 0.0])

    def test_full_rank_agrees_with_least_squares(self):
        _, system = setup1_exact_system(seed=10)
        assert np.allclose(
            min_norm_theta(system), least_squares_theta(system), atol=1e-10
        )

    def test_rank_deficient_setup2_min_norm(self):
        model = setup2_model(stream(11))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        pair = solve_qre(spec, tol=1e-13)
        system = build_linear_system(model.features, pair, 0.5)
        theta_hat = min_norm_theta(system)
        assert np.linalg.norm(system.X @ theta_hat - system.y) <= 1e-9
        feasible = feasible_set_from_policies(model.features, pair, 0.5, 4.0)
        samples = feasible.sample(1000, stream(12))
        norms = np.linalg.norm(samples, axis=1)
        assert np.all(np.linalg.norm(theta_hat) <= norms + 1e-9)


class TestConfidenceSet:
    def test_kappa_zero_exact_membership_is_feasibility(self):
        model = setup2_model(stream(13))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        pair = solve_qre(spec, tol=1e-13)
        system = build_linear_system(model.features, pair, 0.5)
        cset = ConfidenceSet(system.X, system.y, kappa=0.0, norm_sq_cap=4.0)
        assert cset.contains(model.theta, slack=1e-12)
        off = model.theta + np.array([0.1, 0, 0, 0, 0, 0])
        assert not cset.contains(off, slack=1e-12)

    def test_norm_cap_rejects_large_theta(self):
        cset = ConfidenceSet(np.eye(2), np.zeros(2), kappa=100.0, norm_sq_cap=4.0)
        assert not cset.contains(np.array([3.0, 0.0]))

    def test_min_norm_member_pinv_when_feasible(self):
        _, system = setup1_exact_system(seed=14)
        cset = ConfidenceSet(system.X, system.y, kappa=1e-6, norm_sq_cap=4.0)
        member, feasible = cset.min_norm_member()
        assert feasible
        assert np.allclose(member, min_norm_theta(system), atol=1e-12)

    def test_min_norm_member_flags_empty_set(self):
        # inconsistent overdetermined system with kappa too small to absorb it
        x = np.array([[1.0], [1.0]])
        y = np.array([0.0, 1.0])
        cset = ConfidenceSet(x, y, kappa=0.01, norm_sq_cap=1.0)
        _, feasible = cset.min_norm_member()
        assert not feasible

    def test_projection_distance_matches_hand_computation(self):
        # set {theta : theta_0^2 <= 1, ||theta||^2 <= 4}: slab of width 2
        x = np.array([[1.0, 0.0]])
        cset = ConfidenceSet(x, np.zeros(1), kappa=1.0, norm_sq_cap=4.0)
        point = np.array([2.0, 0.0])
        _, dist, feasible = cset.project(point, stream(15))
        assert feasible
        assert dist == pytest.approx(1.0, abs=1e-6)

    def test_coverage_with_theoretical_threshold(self):
        model = setup2_model(stream(16))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        truth = solve_qre(spec, tol=1e-12)
        n = 10**4
        hits = 0
        for rep in range(20):
            data = sample_matrix_actions(truth, n, 17, rep)
            est = frequency_estimate_matrix(data, 6, 6)
            eps1 = 2 * tv_error_bound(6, n, 0.025)
            eps2 = 2 * tv_error_bound(6, n, 0.025)
            mu = np.maximum(est.mu_hat, 1e-12)
            nu = np.maximum(est.nu_hat, 1e-12)
            kappa = theoretical_kappa(
                model.features, mu, nu, 4.0, 0.5,
                min(eps1, 0.9 * mu.min()), min(eps2, 0.9 * nu.min()),
            )
            cset = build_confidence_set(est, model.features, 0.5, kappa, 4.0)
            hits += cset.contains(model.theta)
        assert hits == 20


class TestFeasibleSet:
    def test_trivial_null_space_repeats_particular(self):
        _, system = setup1_exact_system(seed=18)
        feasible = FeasibleSet(system.X, system.y, norm_sq_cap=4.0)
        pts = sample_feasible(feasible, 5, seed=19)
        assert np.allclose(pts, pts[0], atol=1e-12)
        assert np.allclose(pts[0], min_norm_theta(system), atol=1e-10)

    def test_one_dim_null_space_is_a_segment(self):
        model = setup2_model(stream(20))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        pair = solve_qre(spec, tol=1e-13)
        feasible = feasible_set_from_policies(model.features, pair, 0.5, 4.0)
        assert feasible.null_basis.shape[1] == 1
        pts = feasible.sample(200, stream(21))
        assert np.all(np.linalg.norm(pts, axis=1) ** 2 <= 4.0 + 1e-9)
        # all points differ from the particular solution along one direction
        spread = pts - feasible.particular
        ranks = np.linalg.matrix_rank(spread, tol=1e-9)
        assert ranks == 1

    def test_samples_satisfy_invariants(self):
        model = setup2_model(stream(22))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        pair = solve_qre(spec, tol=1e-13)
        feasible = feasible_set_from_policies(model.features, pair, 0.5, 4.0)
        for theta in feasible.sample(100, stream(23)):
            assert np.abs(feasible.X @ theta - feasible.y).max() <= 1e-10
            assert theta @ theta <= 4.0 + 1e-12

    def test_empty_set_raises(self):
        x = np.eye(2)
        feasible = FeasibleSet(x, np.array([5.0, 0.0]), norm_sq_cap=1.0)
        assert feasible.is_empty()
        with pytest.raises(ValueError):
            feasible.sample(3, stream(24))

    def test_projection_is_exact_on_affine_part(self):
        x = np.array([[1.0, 0.0, 0.0]])
        feasible = FeasibleSet(x, np.array([0.5]), norm_sq_cap=100.0)
        proj, dist = feasible.project(np.array([3.0, 1.0, -2.0]))
        assert np.allclose(proj, [0.5, 1.0, -2.0])
        assert dist == pytest.approx(2.5)


class TestHausdorff:
    def test_identical_clouds(self):
        pts = stream(25).standard_normal((50, 3))
        assert hausdorff_estimate(pts, pts.copy(), k=50, seed=1) == 0.0

    def test_concentric_balls(self):
        # analytic Hausdorff distance is exactly 1; finite clouds overshoot
        # by O(n^{-2/3}) angular-gap error (measured ~0.5-3% at 1e4 points),
        # so the band is widened above 1 rather than below
        rng = stream(26)
        def ball_cloud(radius, count):
            raw = rng.standard_normal((count, 3))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True)
            radii = np.concatenate(
                [np.ones(count // 2), rng.random(count - count // 2) ** (1 / 3)]
            )
            return radius * raw * radii[:, None]
        inner = ball_cloud(1.0, 10**4)
        outer = ball_cloud(2.0, 10**4)
        est = hausdorff_estimate(inner, outer, k=10**4, seed=2)
        assert 0.9 <= est <= 1.05

    def test_setup2_confidence_set_shrinks_towards_feasible(self):
        model = setup2_model(stream(27))
        spec = MatrixGameSpec(payoff_from_features(model), 0.5)
        truth = solve_qre(spec, tol=1e-13)
        feasible = feasible_set_from_policies(model.features, truth, 0.5, 4.0)
        medians = []
        for n in (10**3, 10**4, 10**5, 10**6):
            estimates = []
            for rep in range(3):
                data = sample_matrix_actions(truth, n, 28, rep)
                est = frequency_estimate_matrix(data, 6, 6)
                cset = build_confidence_set(
                    est, model.features, 0.5, kappa_rule(n), 4.0
                )
                estimates.append(hausdorff_estimate(feasible, cset, k=32, seed=rep))
            medians.append(np.median(estimates))
        assert all(a >= b - 1e-9 for a, b in zip(medians, medians[1:]))
        assert medians[-1] < medians[0]


class TestReconstructPayoff:
    def test_matches_feature_contraction(self):
        model = setup1_model(stream(29))
        assert np.allclose(
            reconstruct_payoff(model.theta, model.features),
            payoff_from_features(model),
        )

    def test_dimension_mismatch(self):
        model = setup1_model(stream(30))
        with pytest.raises(ValueError):
            reconstruct_payoff(np.zeros(3), model.features)


class TestExactDataIdentity:
    def test_full_rank_models_recover_theta(self):
        for seed in range(5):
            model = setup1_model(stream(40 + seed))
            spec = MatrixGameSpec(payoff_from_features(model), 0.5)
            pair = solve_qre(spec, tol=1e-13)
            system = build_linear_system(model.features, pair, 0.5)
            theta = least_squares_theta(system)
            assert np.linalg.norm(theta - model.theta) <= 1e-8

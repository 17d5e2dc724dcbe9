"""Stepwise inversion for Markov games: per-step confidence sets over
Q-function parameters, ridge-regression transition estimates, Bellman plug-in
reward recovery, and MLE-based softmax policy estimation.

Two drivers are provided: `recover_rewards` (frequency-estimated policies,
equal state weights) and `recover_rewards_mle` (softmax-MLE policies with
empirical visit-probability weights).  Both run the same backward pass:
confidence set -> Q and V estimates -> ridge transition -> plug-in reward.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from invgame.inverse_matrix import ConfidenceSet, floor_distribution
from invgame.markov_game import StagePolicies
from invgame.matrix_game import entropy
from invgame.sampling import (
    EmpiricalMarkovQRE,
    EpisodeDataset,
    empirical_state_distribution,
    frequency_estimate_markov,
    stream,
)


@dataclass(frozen=True)
class StepwiseSystem:
    """One step's stacked constraints: all states' A-blocks, then B-blocks.

    Rows of zero-weight states are zeroed out rather than dropped, so the
    row layout is independent of the weights.
    """

    X: np.ndarray
    y: np.ndarray
    eta: float
    weights: np.ndarray


def build_stepwise_system(
    features: np.ndarray,
    mu_h: np.ndarray,
    nu_h: np.ndarray,
    eta: float,
    weights: np.ndarray | None = None,
) -> StepwiseSystem:
    """Stack the per-state QRE constraints of one step.

    features: (S, m, n, d); mu_h: (S, m); nu_h: (S, n).  With weights, each
    state's block (rows and right-hand side) is scaled by sqrt(weight(s));
    states with zero weight contribute zero rows.  Probabilities must be
    strictly positive wherever the weight is positive.
    """
    features = np.asarray(features, dtype=float)
    s_len, m, n, d = features.shape
    mu_h = np.asarray(mu_h, dtype=float)
    nu_h = np.asarray(nu_h, dtype=float)
    if weights is None:
        weights = np.ones(s_len)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    active = weights > 0
    if np.any(mu_h[active] <= 0) or np.any(nu_h[active] <= 0):
        raise ValueError("zero probability at a positively weighted state")
    root_w = np.sqrt(weights)
    # A-side: rows (s, a) for a >= 1, contracted against nu_h(s)
    diff_a = features[:, 1:] - features[:, :1]  # (S, m-1, n, d)
    a_rows = np.einsum("sand,sn,s->sad", diff_a, nu_h, root_w).reshape(-1, d)
    diff_b = features[:, :, 1:] - features[:, :, :1]  # (S, m, n-1, d)
    b_rows = np.einsum("sabd,sa,s->sbd", diff_b, mu_h, root_w).reshape(-1, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mu = np.where(mu_h > 0, np.log(np.maximum(mu_h, 1e-300)), 0.0)
        log_nu = np.where(nu_h > 0, np.log(np.maximum(nu_h, 1e-300)), 0.0)
    c = ((log_mu[:, 1:] - log_mu[:, :1]) / eta) * root_w[:, None]
    d_vec = (-(log_nu[:, 1:] - log_nu[:, :1]) / eta) * root_w[:, None]
    return StepwiseSystem(
        np.vstack([a_rows, b_rows]),
        np.concatenate([c.ravel(), d_vec.ravel()]),
        eta,
        weights,
    )


def stepwise_confidence_set(
    system: StepwiseSystem, kappa_h: float, theta_norm_cap: float
) -> ConfidenceSet:
    """Confidence set over the step's Q-parameters; the cap bounds ||theta||."""
    if not theta_norm_cap > 0:
        raise ValueError("theta_norm_cap must be positive")
    return ConfidenceSet(system.X, system.y, kappa_h, theta_norm_cap**2)


@dataclass(frozen=True)
class RidgeTransitionEstimator:
    """Gram matrix and step samples backing the ridge value predictor."""

    gram: np.ndarray
    sample_features: np.ndarray  # (T, d) features of the step-h samples
    next_states: np.ndarray  # (T,) observed successors
    ridge_lambda: float

    def value_weights(self, v_next: np.ndarray) -> np.ndarray:
        """Solve Lambda w = sum_t phi_t V(s'_t) for the prediction weights."""
        target = self.sample_features.T @ np.asarray(v_next, dtype=float)[
            self.next_states
        ]
        return np.linalg.solve(self.gram, target)


def ridge_fit(
    data: EpisodeDataset, features: np.ndarray, ridge_lambda: float, step: int
) -> RidgeTransitionEstimator:
    """Accumulate the step's Gram matrix Lambda = sum phi phi' + lambda I."""
    if not ridge_lambda > 0:
        raise ValueError("ridge_lambda must be positive")
    features = np.asarray(features, dtype=float)
    d = features.shape[3]
    if data.n_episodes == 0:
        phi_t = np.zeros((0, d))
        nexts = np.zeros(0, dtype=np.int64)
    else:
        phi_t = features[
            data.states[:, step], data.actions_a[:, step], data.actions_b[:, step]
        ]
        nexts = data.next_states[:, step]
    gram = phi_t.T @ phi_t + ridge_lambda * np.eye(d)
    return RidgeTransitionEstimator(gram, phi_t, nexts, ridge_lambda)


def apply_transition_estimate(
    est: RidgeTransitionEstimator, v_next: np.ndarray, phi_query: np.ndarray
) -> float:
    """Ridge prediction of E[V(s') | s,a,b] for one query feature vector."""
    return float(np.asarray(phi_query, dtype=float) @ est.value_weights(v_next))


@dataclass(frozen=True)
class SoftmaxPolicyModel:
    """Softmax conditionals exp(psi(s,a)' theta) with unit-ball parameters.

    psi_a: (S, m, d_a); psi_b: (S, n, d_b).  ball_radius applies to both
    players' parameter vectors.
    """

    psi_a: np.ndarray
    psi_b: np.ndarray
    ball_radius: float = 1.0

    def __post_init__(self):
        if self.psi_a.ndim != 3 or self.psi_b.ndim != 3:
            raise ValueError("psi maps must have shape (S, actions, dim)")

    @property
    def feature_scale(self) -> float:
        return float(
            max(
                np.linalg.norm(self.psi_a, axis=2).max(),
                np.linalg.norm(self.psi_b, axis=2).max(),
            )
        )

    def conditionals(self, psi: np.ndarray, params: np.ndarray) -> np.ndarray:
        logits = psi @ params
        logits -= logits.max(axis=1, keepdims=True)
        weights = np.exp(logits)
        return weights / weights.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class MleFit:
    params: np.ndarray
    objective_trace: np.ndarray  # mean negative log-likelihood per iteration
    iterations: int
    converged: bool


def mle_fit(
    data: EpisodeDataset,
    model: SoftmaxPolicyModel,
    step: int,
    player: str,
    max_iter: int = 10_000,
    tol: float = 1e-8,
) -> MleFit:
    """Projected-gradient MLE of one step's policy parameters on the ball.

    Minimizes the mean negative log-likelihood of the observed actions under
    the softmax model; fixed step 1/K^2 where K bounds the feature norms,
    stopping when the gradient-mapping norm falls below tol.  The objective
    is convex, so the trace is nonincreasing.
    """
    if player not in ("a", "b"):
        raise ValueError("player must be 'a' or 'b'")
    psi = model.psi_a if player == "a" else model.psi_b
    actions = data.actions_a if player == "a" else data.actions_b
    s_len, n_actions, dim = psi.shape
    counts = np.zeros((s_len, n_actions))
    np.add.at(counts, (data.states[:, step], actions[:, step]), 1.0)
    total = counts.sum()
    if total == 0:
        raise ValueError(f"no samples at step {step}")
    state_counts = counts.sum(axis=1)
    scale = model.feature_scale
    lipschitz = max(scale**2, 1e-12)
    radius = model.ball_radius

    def clamp(theta):
        norm = np.linalg.norm(theta)
        return theta * (radius / norm) if norm > radius else theta

    def objective_and_grad(theta):
        logits = psi @ theta
        shift = logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(logits - shift).sum(axis=1)) + shift[:, 0]
        probs = np.exp(logits - log_z[:, None])
        nll = -(counts * (logits - log_z[:, None])).sum() / total
        grad = (
            np.einsum("s,sad->d", state_counts, probs[:, :, None] * psi)
            - np.einsum("sa,sad->d", counts, psi)
        ) / total
        return nll, grad

    theta = np.zeros(dim)
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nll, grad = objective_and_grad(theta)
        trace.append(nll)
        new_theta = clamp(theta - grad / lipschitz)
        gradient_mapping = lipschitz * np.linalg.norm(theta - new_theta)
        theta = new_theta
        if gradient_mapping <= tol:
            converged = True
            break
    return MleFit(theta, np.array(trace), iterations, converged)


def stepwise_feature_difference_norms(features: np.ndarray) -> tuple[float, float]:
    """Operator norms of the stacked baseline-difference feature matrices
    (columns phi(s,a,.) - phi(s,0,.) across states, and the b-side analogue)."""
    features = np.asarray(features, dtype=float)
    s_len, m, n, d = features.shape
    phi1 = (features[:, 1:] - features[:, :1]).reshape(-1, d).T
    phi2 = (features[:, :, 1:] - features[:, :, :1]).reshape(-1, d).T
    op = lambda a: float(np.linalg.svd(a, compute_uv=False)[0]) if a.size else 0.0
    return op(phi1), op(phi2)


def theoretical_kappa_markov(
    features: np.ndarray,
    mu_h: np.ndarray,
    nu_h: np.ndarray,
    theta_norm_cap: float,
    eta: float,
    eps1: float,
    eps2: float,
) -> float:
    """Step-h containment threshold from the construction-error analysis,
    evaluated with plug-in conditionals (shapes (S, m) and (S, n)).

    Requires eps1 below the smallest mu probability and eps2 below the
    smallest nu probability; containment needs every state's TV error to be
    at most eps/2.
    """
    mu_h = np.asarray(mu_h, dtype=float)
    nu_h = np.asarray(nu_h, dtype=float)
    if not (eps1 < mu_h.min() and eps2 < nu_h.min()):
        raise ValueError("eps must be below the smallest plug-in probability")
    s_len, m = mu_h.shape
    n = nu_h.shape[1]
    phi1_op, phi2_op = stepwise_feature_difference_norms(features)
    cap_sq = theta_norm_cap**2
    return (
        2.0 * cap_sq * (phi1_op**2 * eps1**2 + phi2_op**2 * eps2**2)
        + 2.0 * s_len * m * eps1**2 / (eta**2 * (mu_h.min() - eps1) ** 2)
        + 2.0 * s_len * n * eps2**2 / (eta**2 * (nu_h.min() - eps2) ** 2)
    )


@dataclass(frozen=True)
class InversionConfig:
    """Inputs shared by the reward-recovery drivers.

    kappa may be a scalar or a length-H array of per-step thresholds.
    theta_norm_cap bounds ||theta_h|| (not its square).  The exact_* fields
    replace estimated quantities with ground truth for plug-in identity
    checks: exact_policies stands in for the estimated QRE and
    exact_transition (H, S, m, n, S) replaces the ridge predictor.
    """

    features: np.ndarray
    eta: float
    gamma: float
    kappa: float | np.ndarray
    ridge_lambda: float
    theta_norm_cap: float
    extra_members: int = 0
    member_seed: int = 0
    exact_policies: StagePolicies | None = None
    exact_transition: np.ndarray | None = None
    policy_model: SoftmaxPolicyModel | None = None

    def kappa_at(self, h: int) -> float:
        if np.ndim(self.kappa) == 0:
            return float(self.kappa)
        return float(np.asarray(self.kappa)[h])


@dataclass(frozen=True)
class RecoveredRewardSample:
    """One feasible trajectory through the per-step confidence sets."""

    thetas: np.ndarray  # (H, d)
    q_values: np.ndarray  # (H, S, m, n)
    v_values: np.ndarray  # (H+1, S)
    rewards: np.ndarray  # (H, S, m, n)
    feasible: np.ndarray  # (H,) bool: theta_h certified inside its set


@dataclass(frozen=True)
class _Estimates:
    mu: np.ndarray  # (H, S, m), strictly positive
    nu: np.ndarray  # (H, S, n)
    weights: np.ndarray  # (H, S) per-state block weights


def _floored_conditionals(raw: np.ndarray) -> np.ndarray:
    floored = floor_distribution(raw)
    return floored / floored.sum(axis=-1, keepdims=True)


def _frequency_estimates(
    data: EpisodeDataset, s_len: int, m: int, n: int
) -> tuple[EmpiricalMarkovQRE, _Estimates]:
    est = frequency_estimate_markov(data, s_len, m, n)
    weights = est.visited.astype(float)
    return est, _Estimates(
        _floored_conditionals(est.mu_hat), _floored_conditionals(est.nu_hat), weights
    )


def _mle_estimates(
    data: EpisodeDataset, model: SoftmaxPolicyModel, s_len: int
) -> _Estimates:
    h_len = data.horizon
    mu = np.zeros((h_len, s_len, model.psi_a.shape[1]))
    nu = np.zeros((h_len, s_len, model.psi_b.shape[1]))
    for h in range(h_len):
        mu[h] = model.conditionals(model.psi_a, mle_fit(data, model, h, "a").params)
        nu[h] = model.conditionals(model.psi_b, mle_fit(data, model, h, "b").params)
    rho = empirical_state_distribution(data, s_len)
    return _Estimates(
        _floored_conditionals(mu), _floored_conditionals(nu), rho
    )


def _exact_estimates(
    policies: StagePolicies, weights: np.ndarray | None
) -> _Estimates:
    mu = _floored_conditionals(policies.mu)
    nu = _floored_conditionals(policies.nu)
    if weights is None:
        weights = np.ones(mu.shape[:2])
    return _Estimates(mu, nu, weights)


def stepwise_confidence_sets(
    data: EpisodeDataset, config: InversionConfig, estimates: _Estimates | None = None
) -> list[ConfidenceSet]:
    """The per-step confidence sets the backward recovery passes use."""
    s_len, m, n, _ = config.features.shape
    if estimates is None:
        if config.exact_policies is not None:
            estimates = _exact_estimates(config.exact_policies, None)
        else:
            _, estimates = _frequency_estimates(data, s_len, m, n)
    sets = []
    for h in range(data.horizon):
        system = build_stepwise_system(
            config.features, estimates.mu[h], estimates.nu[h], config.eta,
            estimates.weights[h],
        )
        sets.append(
            stepwise_confidence_set(system, config.kappa_at(h), config.theta_norm_cap)
        )
    return sets


def _stage_values(
    q_h: np.ndarray, mu_h: np.ndarray, nu_h: np.ndarray, eta: float
) -> np.ndarray:
    """V(s) = mu' Q nu + (H(mu) - H(nu)) / eta per state."""
    s_len = q_h.shape[0]
    v = np.einsum("sa,sab,sb->s", mu_h, q_h, nu_h)
    for s in range(s_len):
        v[s] += (entropy(mu_h[s]) - entropy(nu_h[s])) / eta
    return v


def _backward_pass(
    data: EpisodeDataset,
    config: InversionConfig,
    estimates: _Estimates,
    theta_picker,
) -> RecoveredRewardSample:
    s_len, m, n, d = config.features.shape
    h_len = data.horizon
    thetas = np.zeros((h_len, d))
    q_values = np.zeros((h_len, s_len, m, n))
    v_values = np.zeros((h_len + 1, s_len))
    rewards = np.zeros((h_len, s_len, m, n))
    feasible = np.zeros(h_len, dtype=bool)
    flat_features = config.features.reshape(-1, d)
    for h in range(h_len - 1, -1, -1):
        system = build_stepwise_system(
            config.features, estimates.mu[h], estimates.nu[h], config.eta,
            estimates.weights[h],
        )
        cset = stepwise_confidence_set(
            system, config.kappa_at(h), config.theta_norm_cap
        )
        try:
            thetas[h], feasible[h] = theta_picker(h, cset)
        except Exception as err:
            raise RuntimeError(f"theta selection failed at step {h}") from err
        q_values[h] = (flat_features @ thetas[h]).reshape(s_len, m, n)
        v_values[h] = _stage_values(q_values[h], estimates.mu[h], estimates.nu[h], config.eta)
        if config.exact_transition is not None:
            continuation = config.exact_transition[h] @ v_values[h + 1]
        else:
            est = ridge_fit(data, config.features, config.ridge_lambda, h)
            weights_vec = est.value_weights(v_values[h + 1])
            continuation = (flat_features @ weights_vec).reshape(s_len, m, n)
        rewards[h] = q_values[h] - config.gamma * continuation
    return RecoveredRewardSample(thetas, q_values, v_values, rewards, feasible)


def _run_algorithm(
    data: EpisodeDataset, config: InversionConfig, estimates: _Estimates
) -> list[RecoveredRewardSample]:
    samples = [
        _backward_pass(
            data, config, estimates, lambda h, cset: cset.min_norm_member()
        )
    ]
    if config.extra_members > 0:
        rng = stream(config.member_seed)
        for _ in range(config.extra_members):
            def picker(h, cset, rng=rng):
                member = cset.sample_members(1, rng)[0]
                return member, True
            samples.append(_backward_pass(data, config, estimates, picker))
    return samples


def recover_rewards(
    data: EpisodeDataset, config: InversionConfig
) -> list[RecoveredRewardSample]:
    """Frequency-estimator reward recovery (backward confidence-set pass).

    Policies come from per-state frequencies (or config.exact_policies);
    unvisited states carry uniform placeholders and zero block weight.  The
    first returned sample uses the canonical min-norm selection, followed by
    config.extra_members random feasible trajectories.
    """
    s_len, m, n, _ = config.features.shape
    if config.exact_policies is not None:
        estimates = _exact_estimates(config.exact_policies, None)
    else:
        _, estimates = _frequency_estimates(data, s_len, m, n)
    return _run_algorithm(data, config, estimates)


def recover_rewards_mle(
    data: EpisodeDataset, config: InversionConfig
) -> list[RecoveredRewardSample]:
    """MLE-based reward recovery with visit-probability block weights.

    Policies come from softmax MLE fits of config.policy_model (or
    config.exact_policies) and each state's constraints are weighted by the
    empirical visit probability, so unvisited states contribute nothing.
    """
    s_len = config.features.shape[0]
    rho = empirical_state_distribution(data, s_len)
    if config.exact_policies is not None:
        estimates = _exact_estimates(config.exact_policies, rho)
    else:
        if config.policy_model is None:
            raise ValueError("recover_rewards_mle needs a policy_model")
        estimates = _mle_estimates(data, config.policy_model, s_len)
        estimates = replace(estimates, weights=rho)
    return _run_algorithm(data, config, estimates)

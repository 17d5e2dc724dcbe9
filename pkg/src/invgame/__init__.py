"""Forward and inverse solvers for entropy-regularized zero-sum games.

Forward: compute quantal response equilibria of matrix games and
finite-horizon Markov games.  Inverse: recover the payoff or reward
parameters consistent with observed equilibrium play, as point estimates,
feasible sets, and confidence sets.
"""

from invgame.inverse_markov import (
    InversionConfig,
    MleFit,
    RecoveredRewardSample,
    RidgeTransitionEstimator,
    SoftmaxPolicyModel,
    StepwiseSystem,
    apply_transition_estimate,
    build_stepwise_system,
    mle_fit,
    recover_rewards,
    recover_rewards_mle,
    ridge_fit,
    stepwise_confidence_set,
    stepwise_confidence_sets,
    theoretical_kappa_markov,
)
from invgame.inverse_matrix import (
    ConfidenceSet,
    FeasibleSet,
    LinearSystem,
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
)
from invgame.markov_game import (
    LinearMDPModel,
    MarkovGameSpec,
    StagePolicies,
    ValueFunctions,
    backward_qre,
    check_well_posedness,
    visit_distributions,
)
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
from invgame.metrics import (
    ErrorReport,
    hellinger_sq,
    qre_discrepancy,
    qre_discrepancy_markov,
    reward_metric_D,
    reward_metric_D1,
    tv,
)
from invgame.sampling import (
    EmpiricalMarkovQRE,
    EmpiricalQRE,
    EpisodeDataset,
    MatrixDataset,
    empirical_state_distribution,
    frequency_estimate_markov,
    frequency_estimate_matrix,
    read_dataset,
    sample_episodes,
    sample_matrix_actions,
    stream,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Entropy-regularized two-player zero-sum matrix games and their QRE.

The row player maximizes and the column player minimizes the regularized
objective  mu' Q nu + H(mu)/eta - H(nu)/eta.  For eta > 0 the equilibrium
(the quantal response equilibrium, QRE) is the unique pair of mutually
consistent softmax responses; both policies have full support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-300  # representation-level floor only; softmax outputs are positive


class QreConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach the requested tolerance."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"QRE iteration did not converge after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )


@dataclass(frozen=True)
class MatrixGameSpec:
    """A zero-sum matrix game with entropy regularization strength eta."""

    payoff: np.ndarray
    eta: float

    def __post_init__(self):
        payoff = np.asarray(self.payoff, dtype=float)
        object.__setattr__(self, "payoff", payoff)
        if payoff.ndim != 2 or payoff.shape[0] < 2 or payoff.shape[1] < 2:
            raise ValueError(f"payoff must be at least 2x2, got shape {payoff.shape}")
        if not np.all(np.isfinite(payoff)):
            raise ValueError("payoff entries must be finite")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")

    @property
    def m(self) -> int:
        return self.payoff.shape[0]

    @property
    def n(self) -> int:
        return self.payoff.shape[1]


@dataclass(frozen=True)
class PolicyPair:
    """Mixed strategies (mu over rows, nu over columns)."""

    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        for name, p in (("mu", mu), ("nu", nu)):
            if p.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            if np.any(p < 0):
                raise ValueError(f"{name} has negative entries")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must sum to 1 (got {p.sum()!r})")


@dataclass(frozen=True)
class FeatureModel:
    """Linear payoff model Q(a,b) = <features[a,b], theta>.

    features has shape (m, n, d); each feature vector is expected to satisfy
    ||phi(a,b)||_2 <= 1 and the parameter ||theta||^2 <= norm_sq_cap.
    """

    features: np.ndarray
    theta: np.ndarray
    norm_sq_cap: float = field(default=np.inf)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "theta", theta)
        if features.ndim != 3:
            raise ValueError("features must have shape (m, n, d)")
        if theta.ndim != 1 or theta.shape[0] != features.shape[2]:
            raise ValueError(
                f"theta dimension {theta.shape} does not match feature "
                f"dimension {features.shape[2]}"
            )
        if float(theta @ theta) > self.norm_sq_cap * (1 + 1e-12):
            raise ValueError("||theta||^2 exceeds the declared cap")

    @property
    def dim(self) -> int:
        return self.features.shape[2]


def payoff_from_features(model: FeatureModel) -> np.ndarray:
    """Contract the feature tensor with theta: Q[a, b] = <phi(a,b), theta>."""
    return model.features @ model.theta


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def solve_qre(
    spec: MatrixGameSpec,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    damping: float = 0.5,
) -> PolicyPair:
    """Compute the QRE by damped fixed-point iteration in logit space.

    From the current pair the softmax best-response logits are mixed into the
    old logits with weight `damping`.  Converges when both the sup-norm policy
    change and the fixed-point residual drop below `tol`.  The damping factor
    is halved (down to 1/1024) whenever the residual stalls, which extends the
    convergent range to strongly scaled payoffs.

    Raises QreConvergenceError when max_iter is exhausted.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    q = spec.payoff
    eta = spec.eta
    log_mu = np.full(spec.m, -np.log(spec.m))
    log_nu = np.full(spec.n, -np.log(spec.n))
    alpha = damping
    best_residual = np.inf
    stall = 0
    for _ in range(max_iter):
        mu = np.exp(log_mu)
        nu = np.exp(log_nu)
        target_mu = _log_softmax(eta * (q @ nu))
        target_nu = _log_softmax(-eta * (q.T @ mu))
        residual = max(
            np.abs(np.exp(target_mu) - mu).max(),
            np.abs(np.exp(target_nu) - nu).max(),
        )
        new_log_mu = _log_softmax((1 - alpha) * log_mu + alpha * target_mu)
        new_log_nu = _log_softmax((1 - alpha) * log_nu + alpha * target_nu)
        change = max(
            np.abs(np.exp(new_log_mu) - mu).max(),
            np.abs(np.exp(new_log_nu) - nu).max(),
        )
        log_mu, log_nu = new_log_mu, new_log_nu
        if change < tol and residual <= tol:
            mu = np.maximum(np.exp(log_mu), PROB_FLOOR)
            nu = np.maximum(np.exp(log_nu), PROB_FLOOR)
            return PolicyPair(mu / mu.sum(), nu / nu.sum())
        # residual stalling for 500 iterations signals oscillation; damp harder
        if residual < best_residual * (1 - 1e-3):
            best_residual = residual
            stall = 0
        else:
            stall += 1
            if stall >= 500 and alpha > 1 / 1024:
                alpha /= 2
                stall = 0
    raise QreConvergenceError(max_iter, float(residual))


def qre_residual(spec: MatrixGameSpec, policies: PolicyPair) -> float:
    """Sup-norm gap between the policies and their softmax best responses."""
    q = spec.payoff
    mu, nu = policies.mu, policies.nu
    if mu.shape[0] != spec.m or nu.shape[0] != spec.n:
        raise ValueError("policy dimensions do not match the game")
    rhs_mu = np.exp(_log_softmax(spec.eta * (q @ nu)))
    rhs_nu = np.exp(_log_softmax(-spec.eta * (q.T @ mu)))
    return float(max(np.abs(mu - rhs_mu).max(), np.abs(nu - rhs_nu).max()))


def entropy(p: np.ndarray) -> float:
    """Shannon entropy; zero-probability entries contribute zero."""
    p = np.asarray(p, dtype=float)
    mask = p > 0
    return float(-(p[mask] * np.log(p[mask])).sum())


def game_value(spec: MatrixGameSpec, policies: PolicyPair) -> float:
    """Regularized objective mu' Q nu + H(mu)/eta - H(nu)/eta."""
    mu, nu = policies.mu, policies.nu
    return float(
        mu @ spec.payoff @ nu
        + (entropy(mu) - entropy(nu)) / spec.eta
    )

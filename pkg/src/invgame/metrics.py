"""Distances and error metrics: TV, Hellinger, payoff/reward errors, and the
discrepancy between re-solved and observed equilibria."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from invgame.markov_game import MarkovGameSpec, StagePolicies, backward_qre
from invgame.matrix_game import MatrixGameSpec, PolicyPair, solve_qre


@dataclass(frozen=True)
class ErrorReport:
    """One repetition's error metrics; None marks a metric that does not
    apply to the experiment kind (never coerced to zero)."""

    theta_error: float | None = None
    payoff_error: float | None = None
    qre_tv_error: float | None = None
    reward_D: float | None = None
    reward_D1: float | None = None


def _check_pair(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return p, q


def tv(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance, half the L1 distance."""
    p, q = _check_pair(p, q)
    return float(0.5 * np.abs(p - q).sum())


def hellinger_sq(p: np.ndarray, q: np.ndarray) -> float:
    """Squared Hellinger distance with the 1/2 convention, so TV <= sqrt(2 H^2)."""
    p, q = _check_pair(p, q)
    return float(0.5 * ((np.sqrt(p) - np.sqrt(q)) ** 2).sum())


def reward_metric_D(r: np.ndarray, r_prime: np.ndarray) -> float:
    """Sup-norm distance over all (h, s, a, b) entries."""
    r = np.asarray(r, dtype=float)
    r_prime = np.asarray(r_prime, dtype=float)
    if r.shape != r_prime.shape:
        raise ValueError(f"reward shapes differ: {r.shape} vs {r_prime.shape}")
    return float(np.abs(r - r_prime).max())


def reward_metric_D1(
    r: np.ndarray, r_prime: np.ndarray, rho: np.ndarray
) -> float:
    """State-average metric: sup over (h, a, b) of E_{s~rho_h} |r - r'|."""
    r = np.asarray(r, dtype=float)
    r_prime = np.asarray(r_prime, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if r.shape != r_prime.shape:
        raise ValueError(f"reward shapes differ: {r.shape} vs {r_prime.shape}")
    if rho.shape != r.shape[:2]:
        raise ValueError("rho must have shape (H, S)")
    averaged = np.einsum("hs,hsmn->hmn", rho, np.abs(r - r_prime))
    return float(averaged.max())


def qre_discrepancy(
    estimated_payoff: np.ndarray,
    true_policies: PolicyPair,
    eta: float,
    tol: float = 1e-12,
) -> float:
    """Re-solve the matrix game on the estimated payoff and compare equilibria.

    Returns TV(mu_hat, mu*) + TV(nu_hat, nu*).
    """
    pair = solve_qre(MatrixGameSpec(estimated_payoff, eta), tol=tol)
    return tv(pair.mu, true_policies.mu) + tv(pair.nu, true_policies.nu)


def qre_discrepancy_markov(
    true_spec: MarkovGameSpec,
    estimated_rewards: np.ndarray,
    true_policies: StagePolicies,
    true_state_dists: np.ndarray,
    tol: float = 1e-12,
) -> tuple[float, np.ndarray]:
    """Markov QRE discrepancy of re-solved play on estimated rewards.

    Rebuilds the game with the estimated rewards and the true transition
    kernel, solves it backward, and averages each step's per-state
    TV(mu) + TV(nu) under the true visit distribution.  Returns the mean
    over steps together with the per-step values.
    """
    est_spec = MarkovGameSpec(
        np.asarray(estimated_rewards, dtype=float),
        true_spec.transition,
        eta=true_spec.eta,
        gamma=true_spec.gamma,
    )
    policies, _ = backward_qre(est_spec, tol=tol)
    tv_sum = 0.5 * (
        np.abs(policies.mu - true_policies.mu).sum(axis=2)
        + np.abs(policies.nu - true_policies.nu).sum(axis=2)
    )
    per_step = np.einsum("hs,hs->h", true_state_dists, tv_sum)
    return float(per_step.mean()), per_step

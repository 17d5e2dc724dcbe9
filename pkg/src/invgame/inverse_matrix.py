"""Identifiability machinery for matrix games: the QRE-constraint linear
system, rank tests, least-squares / minimum-norm estimators, confidence sets,
and Hausdorff-distance estimation between parameter sets.

Conventions: action 0 is the baseline for both players (log-ratios are taken
against it), and norm caps are on the squared Euclidean norm, so a cap of M
admits exactly the parameters with ||theta||^2 <= M.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from invgame.matrix_game import PolicyPair
from invgame.sampling import EmpiricalQRE, stream

LOG_FLOOR = 1e-12  # probabilities are floored here before log-ratios
RANK_TOL_FACTOR = 1e-12


class PartialIdentifiabilityError(np.linalg.LinAlgError):
    """Normal matrix is numerically singular; the system does not pin theta."""


def floor_distribution(p: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    """Clip probabilities away from zero so log-ratios exist."""
    return np.maximum(np.asarray(p, dtype=float), floor)


@dataclass(frozen=True)
class LinearSystem:
    """Stacked QRE constraints X theta = y with the eta used in the log-ratios."""

    X: np.ndarray
    y: np.ndarray
    eta: float

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be 2-D with matching right-hand side")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def residual_sq(self, theta: np.ndarray) -> float:
        r = self.X @ theta - self.y
        return float(r @ r)


def build_linear_system(
    features: np.ndarray, policies: PolicyPair, eta: float
) -> LinearSystem:
    """Assemble the m+n-2 QRE constraints from features of shape (m, n, d).

    Rows a = 1..m-1:  <(phi(a,.) - phi(0,.)) nu, theta> = log(mu_a/mu_0)/eta
    Rows b = 1..n-1:  <(phi(.,b) - phi(.,0))' mu, theta> = -log(nu_b/nu_0)/eta

    Raises ValueError on nonpositive probabilities; callers holding empirical
    estimates must floor them first.
    """
    features = np.asarray(features, dtype=float)
    mu, nu = policies.mu, policies.nu
    m, n, _ = features.shape
    if mu.shape[0] != m or nu.shape[0] != n:
        raise ValueError("policy dimensions do not match features")
    if mu.min() <= 0 or nu.min() <= 0:
        raise ValueError("log-ratios need strictly positive probabilities")
    a_block = np.einsum("and,n->ad", features[1:] - features[0], nu)
    b_block = np.einsum("abd,a->bd", features[:, 1:] - features[:, :1], mu)
    c = (np.log(mu[1:]) - np.log(mu[0])) / eta
    d = -(np.log(nu[1:]) - np.log(nu[0])) / eta
    return LinearSystem(np.vstack([a_block, b_block]), np.concatenate([c, d]), eta)


def numerical_rank(x: np.ndarray) -> int:
    """SVD rank with threshold sigma_1 * max(rows, cols) * 1e-12."""
    sigma = np.linalg.svd(x, compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int((sigma > sigma[0] * max(x.shape) * RANK_TOL_FACTOR).sum())


def rank_condition(x: np.ndarray, d: int) -> tuple[bool, int]:
    """Whether the stacked constraint matrix pins all d parameter directions."""
    rank = numerical_rank(np.asarray(x, dtype=float))
    return rank == d, rank


def least_squares_theta(system: LinearSystem) -> np.ndarray:
    """Unique least-squares solution; requires a numerically full-rank system."""
    ok, rank = rank_condition(system.X, system.dim)
    if not ok:
        raise PartialIdentifiabilityError(
            f"system rank {rank} < {system.dim}: theta is only partially "
            "identified; use min_norm_theta or a confidence set"
        )
    theta, *_ = np.linalg.lstsq(system.X, system.y, rcond=None)
    return theta


def min_norm_theta(system: LinearSystem) -> np.ndarray:
    """Moore-Penrose solution X^+ y, the least-squares solution of least norm."""
    return np.linalg.pinv(system.X) @ system.y


def reconstruct_payoff(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Payoff matrix induced by theta: Q[a, b] = <phi(a,b), theta>."""
    features = np.asarray(features, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if features.shape[-1] != theta.shape[0]:
        raise ValueError("theta dimension does not match features")
    return features @ theta


def _ball_clamp(theta: np.ndarray, norm_sq_cap: float) -> np.ndarray:
    sq = float(theta @ theta)
    if sq <= norm_sq_cap or sq == 0.0:
        return theta
    return theta * np.sqrt(norm_sq_cap / sq)


@dataclass(frozen=True)
class ConfidenceSet:
    """{theta : ||X theta - y||^2 <= kappa, ||theta||^2 <= norm_sq_cap}."""

    X: np.ndarray
    y: np.ndarray
    kappa: float
    norm_sq_cap: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not self.norm_sq_cap > 0:
            raise ValueError("norm cap must be positive")
        sigma = np.linalg.svd(self.X, compute_uv=False)
        lipschitz = 2.0 * float(sigma[0]) ** 2 if sigma.size and sigma[0] > 0 else 1.0
        object.__setattr__(self, "_lipschitz", lipschitz)

    def residual_sq(self, theta: np.ndarray) -> float:
        r = self.X @ theta - self.y
        return float(r @ r)

    def contains(self, theta: np.ndarray, slack: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return (
            self.residual_sq(theta) <= self.kappa + slack
            and float(theta @ theta) <= self.norm_sq_cap + slack
        )

    def _descend_to_feasible(self, start: np.ndarray, iters: int) -> np.ndarray:
        """Projected gradient on max(||X theta - y||^2 - kappa, 0), clamping
        to the norm ball each step."""
        lipschitz = self._lipschitz
        theta = _ball_clamp(np.asarray(start, dtype=float), self.norm_sq_cap)
        for _ in range(iters):
            r = self.X @ theta - self.y
            if float(r @ r) <= self.kappa:
                break
            theta = _ball_clamp(
                theta - (2.0 / lipschitz) * (self.X.T @ r), self.norm_sq_cap
            )
        return theta

    def project(
        self,
        point: np.ndarray,
        rng: np.random.Generator | None = None,
        restarts: int = 16,
        iters: int = 500,
    ) -> tuple[np.ndarray, float, bool]:
        """Approximate projection of `point` onto the set.

        Returns (member, distance, feasible).  Feasible points reached by the
        violation descent are pulled toward `point` by bisection along the
        connecting segment (the set is convex, so feasibility is monotone on
        it).  When no feasible point is found the set is empty up to numerics
        and the least-violating iterate is returned with feasible=False.
        """
        point = np.asarray(point, dtype=float)
        if self.contains(point):
            return point, 0.0, True
        if rng is None:
            rng = stream(0)
        d = self.X.shape[1]
        starts = [point, min_norm_theta(LinearSystem(self.X, self.y, 1.0))]
        radius = np.sqrt(self.norm_sq_cap)
        for _ in range(max(restarts - 2, 0)):
            raw = rng.standard_normal(d)
            raw *= radius * rng.random() ** (1.0 / d) / np.linalg.norm(raw)
            starts.append(raw)
        best_point, best_dist = None, np.inf
        fallback, fallback_viol, fallback_dist = None, np.inf, np.inf
        for start in starts:
            theta = self._descend_to_feasible(start, iters)
            if not self.contains(theta, slack=1e-12):
                viol = self.residual_sq(theta) - self.kappa
                dist = float(np.linalg.norm(theta - point))
                # violation is flat along the null space, so break near-ties
                # by distance to the query point
                if viol < fallback_viol - 1e-12 or (
                    viol < fallback_viol + 1e-12 and dist < fallback_dist
                ):
                    fallback, fallback_viol, fallback_dist = theta, viol, dist
                continue
            lo, hi = 0.0, 1.0  # point + t (theta - point); t=1 feasible
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                cand = point + mid * (theta - point)
                if self.contains(cand, slack=1e-12):
                    hi = mid
                else:
                    lo = mid
            theta = point + hi * (theta - point)
            dist = float(np.linalg.norm(theta - point))
            if dist < best_dist:
                best_point, best_dist = theta, dist
        if best_point is None:
            return fallback, float(np.linalg.norm(fallback - point)), False
        return best_point, best_dist, True

    def sample_members(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Spread of feasible points from violation descents at random starts."""
        d = self.X.shape[1]
        radius = np.sqrt(self.norm_sq_cap)
        points = []
        attempts = 0
        while len(points) < k and attempts < 8 * k:
            attempts += 1
            raw = rng.standard_normal(d)
            raw *= radius * rng.random() ** (1.0 / d) / np.linalg.norm(raw)
            theta = self._descend_to_feasible(raw, 500)
            if self.contains(theta, slack=1e-12):
                points.append(theta)
        if not points:
            raise ValueError("confidence set appears to be empty")
        return np.array(points)

    def min_norm_member(self) -> tuple[np.ndarray, bool]:
        """Canonical point estimate: the pseudoinverse solution when it is a
        member, otherwise the projection of the origin onto the set.

        The second element is False when the set is empty up to numerics and
        the returned point is only the least-violating surrogate.
        """
        pinv_theta = min_norm_theta(LinearSystem(self.X, self.y, 1.0))
        if self.contains(pinv_theta, slack=1e-12):
            return pinv_theta, True
        if self.residual_sq(pinv_theta) > self.kappa + 1e-12:
            # even the least-squares residual exceeds kappa: the set is empty
            # and the clamped pseudoinverse point is the canonical surrogate
            return _ball_clamp(pinv_theta, self.norm_sq_cap), False
        member, _, feasible = self.project(np.zeros(self.X.shape[1]))
        return member, feasible


def build_confidence_set(
    empirical: EmpiricalQRE,
    features: np.ndarray,
    eta: float,
    kappa: float,
    norm_sq_cap: float,
) -> ConfidenceSet:
    """Confidence set from empirical marginals (floored before log-ratios)."""
    pair = _floored_pair(empirical.mu_hat, empirical.nu_hat)
    system = build_linear_system(features, pair, eta)
    return ConfidenceSet(system.X, system.y, kappa, norm_sq_cap)


def _floored_pair(mu: np.ndarray, nu: np.ndarray) -> PolicyPair:
    mu = floor_distribution(mu)
    nu = floor_distribution(nu)
    return PolicyPair(mu / mu.sum(), nu / nu.sum())


@dataclass(frozen=True)
class FeasibleSet:
    """Exact solution set {theta : X theta = y, ||theta||^2 <= norm_sq_cap},
    represented by the pseudoinverse particular solution plus an orthonormal
    null-space basis."""

    X: np.ndarray
    y: np.ndarray
    norm_sq_cap: float
    particular: np.ndarray = field(init=False)
    null_basis: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.X, dtype=float)
        u, sigma, vt = np.linalg.svd(x, full_matrices=True)
        if sigma.size and sigma[0] > 0:
            rank = int((sigma > sigma[0] * max(x.shape) * RANK_TOL_FACTOR).sum())
        else:
            rank = 0
        inv = np.zeros((x.shape[1], x.shape[0]))
        for i in range(rank):
            inv += np.outer(vt[i], u[:, i]) / sigma[i]
        object.__setattr__(self, "particular", inv @ self.y)
        object.__setattr__(self, "null_basis", vt[rank:].T)

    @property
    def radius(self) -> float:
        slack = self.norm_sq_cap - float(self.particular @ self.particular)
        return np.sqrt(max(slack, 0.0))

    def is_empty(self, tol: float = 1e-12) -> bool:
        return float(self.particular @ self.particular) > self.norm_sq_cap + tol

    def contains(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        return (
            np.abs(self.X @ theta - self.y).max() <= tol
            and float(theta @ theta) <= self.norm_sq_cap + tol
        )

    def project(self, point: np.ndarray) -> tuple[np.ndarray, float]:
        """Exact projection: affine projection, then clamp the null-space
        coordinates to the residual-norm ball."""
        if self.is_empty():
            raise ValueError("feasible set is empty: particular solution "
                             "exceeds the norm cap")
        point = np.asarray(point, dtype=float)
        z = self.null_basis.T @ (point - self.particular)
        z_norm = float(np.linalg.norm(z))
        r = self.radius
        if z_norm > r and z_norm > 0:
            z = z * (r / z_norm)
        proj = self.particular + self.null_basis @ z
        return proj, float(np.linalg.norm(point - proj))

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """K points particular + N z with z uniform in the residual ball."""
        if self.is_empty():
            raise ValueError("feasible set is empty: particular solution "
                             "exceeds the norm cap")
        null_dim = self.null_basis.shape[1]
        if null_dim == 0:
            return np.tile(self.particular, (k, 1))
        raw = rng.standard_normal((k, null_dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        raw *= self.radius * rng.random((k, 1)) ** (1.0 / null_dim)
        return self.particular + raw @ self.null_basis.T


def feasible_set_from_policies(
    features: np.ndarray, policies: PolicyPair, eta: float, norm_sq_cap: float
) -> FeasibleSet:
    """Exact feasible set of the QRE constraints at the given (exact) policies."""
    system = build_linear_system(features, policies, eta)
    return FeasibleSet(system.X, system.y, norm_sq_cap)


def sample_feasible(feasible: FeasibleSet, k: int, seed: int) -> np.ndarray:
    return feasible.sample(k, stream(seed))


def _sample_points(obj, k: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(obj, FeasibleSet):
        return obj.sample(k, rng)
    if isinstance(obj, ConfidenceSet):
        return obj.sample_members(k, rng)
    pts = np.asarray(obj, dtype=float)
    if pts.ndim != 2:
        raise TypeError("point clouds must be 2-D arrays")
    if pts.shape[0] > k:
        idx = rng.choice(pts.shape[0], size=k, replace=False)
        pts = pts[idx]
    return pts


def _distance_to(obj, point: np.ndarray, rng: np.random.Generator) -> float:
    if isinstance(obj, FeasibleSet):
        return obj.project(point)[1]
    if isinstance(obj, ConfidenceSet):
        return obj.project(point, rng)[1]
    pts = np.asarray(obj, dtype=float)
    return float(np.linalg.norm(pts - point, axis=1).min())


def hausdorff_estimate(set_a, set_b, k: int = 64, seed: int = 0) -> float:
    """Sampled Hausdorff distance between parameter sets.

    Each set may be a FeasibleSet, a ConfidenceSet, or an (n, d) point cloud.
    Directed distances take the max over K sampled points of one set of the
    distance to the other; distances to a FeasibleSet are exact projections,
    distances to a ConfidenceSet use the multi-restart descent.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = stream(seed)
    pts_a = _sample_points(set_a, k, rng)
    pts_b = _sample_points(set_b, k, rng)
    d_ab = max(_distance_to(set_b, p, rng) for p in pts_a)
    d_ba = max(_distance_to(set_a, p, rng) for p in pts_b)
    return max(d_ab, d_ba)


def feature_difference_norms(features: np.ndarray) -> tuple[float, float]:
    """Operator norms of the baseline-difference feature matrices.

    Phi_1 stacks phi(a,.) - phi(0,.) over a >= 1 as d-columns; Phi_2 stacks
    phi(.,b) - phi(.,0) over b >= 1.  Used by the theoretical threshold rule.
    """
    features = np.asarray(features, dtype=float)
    m, n, d = features.shape
    phi1 = (features[1:] - features[0]).reshape((m - 1) * n, d).T
    phi2 = np.swapaxes(features[:, 1:] - features[:, :1], 0, 1).reshape(
        (n - 1) * m, d
    ).T
    op = lambda a: float(np.linalg.svd(a, compute_uv=False)[0]) if a.size else 0.0
    return op(phi1), op(phi2)


def theoretical_kappa(
    features: np.ndarray,
    mu: np.ndarray,
    nu: np.ndarray,
    norm_sq_cap: float,
    eta: float,
    eps1: float,
    eps2: float,
) -> float:
    """Containment threshold from the construction-error analysis, computed
    with plug-in policy estimates.

    Valid when eps1 < min(mu) and eps2 < min(nu); both TV errors must be at
    most eps/2 for the containment guarantee to apply.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if not (eps1 < mu.min() and eps2 < nu.min()):
        raise ValueError("eps must be below the smallest plug-in probability")
    m, n = mu.shape[0], nu.shape[0]
    phi1_op, phi2_op = feature_difference_norms(features)
    term_b = 2.0 * (
        norm_sq_cap * phi1_op**2 + n / (eta**2 * (nu.min() - eps2) ** 2)
    ) * eps2**2
    term_a = 2.0 * (
        norm_sq_cap * phi2_op**2 + m / (eta**2 * (mu.min() - eps1) ** 2)
    ) * eps1**2
    return term_a + term_b


def tv_error_bound(support: int, n_samples: int, delta: float) -> float:
    """High-probability bound on TV(freq estimate, truth): the mean term
    sqrt(support/N)/2 plus the bounded-difference deviation term."""
    return 0.5 * np.sqrt(support / n_samples) + np.sqrt(
        np.log(2.0 / delta) / (2.0 * n_samples)
    )

"""Observation datasets drawn from QRE play, and frequency estimators.

All sampling is driven by Philox streams derived from (seed, rep) via
SeedSequence spawn keys, so repetitions are order-independent and two runs
with the same seed produce bit-identical datasets.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from invgame.markov_game import MarkovGameSpec, StagePolicies
from invgame.matrix_game import PolicyPair

DATASET_HEADER = "episode,step,state,action_a,action_b,next_state"


def stream(seed: int, rep: int = 0) -> np.random.Generator:
    """Counter-based generator for repetition `rep` of a seeded experiment."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,)))
    )


@dataclass(frozen=True)
class MatrixDataset:
    """N i.i.d. action pairs; actions_a and actions_b are index arrays."""

    actions_a: np.ndarray
    actions_b: np.ndarray

    def __post_init__(self):
        if self.actions_a.shape != self.actions_b.shape or self.actions_a.ndim != 1:
            raise ValueError("action arrays must be 1-D and equal length")

    @property
    def n_samples(self) -> int:
        return self.actions_a.shape[0]

    def prefix(self, n: int) -> "MatrixDataset":
        return MatrixDataset(self.actions_a[:n], self.actions_b[:n])


@dataclass(frozen=True)
class EpisodeDataset:
    """T episodes of H steps: states, actions, and successor states.

    states, actions_a, actions_b, next_states all have shape (T, H).
    """

    states: np.ndarray
    actions_a: np.ndarray
    actions_b: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        shape = self.states.shape
        for arr in (self.actions_a, self.actions_b, self.next_states):
            if arr.shape != shape:
                raise ValueError("all episode arrays must share shape (T, H)")
        if self.states.ndim != 2:
            raise ValueError("episode arrays must have shape (T, H)")

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def prefix(self, t: int) -> "EpisodeDataset":
        return EpisodeDataset(
            self.states[:t],
            self.actions_a[:t],
            self.actions_b[:t],
            self.next_states[:t],
        )


@dataclass(frozen=True)
class EmpiricalQRE:
    """Marginal action frequencies for a matrix-game dataset."""

    mu_hat: np.ndarray
    nu_hat: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class EmpiricalMarkovQRE:
    """Per-step per-state conditional frequencies with visit counts.

    Unvisited (h, s) cells hold the uniform distribution and are flagged in
    `visited`; downstream weighted systems assign them zero weight.
    """

    mu_hat: np.ndarray  # (H, S, m)
    nu_hat: np.ndarray  # (H, S, n)
    counts: np.ndarray  # (H, S) integer visit counts N_h(s)
    visited: np.ndarray  # (H, S) bool


def _draw_categorical(rng: np.random.Generator, cum: np.ndarray, size: int) -> np.ndarray:
    """Inverse-CDF draws; cum is the cumulative distribution (1-D)."""
    return np.searchsorted(cum, rng.random(size), side="right").astype(np.int64)


def sample_matrix_actions(
    policies: PolicyPair, n_samples: int, seed: int, rep: int = 0
) -> MatrixDataset:
    """Draw N independent (a, b) pairs with a ~ mu and b ~ nu."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = stream(seed, rep)
    a = _draw_categorical(rng, np.cumsum(policies.mu), n_samples)
    b = _draw_categorical(rng, np.cumsum(policies.nu), n_samples)
    return MatrixDataset(a, b)


def frequency_estimate_matrix(data: MatrixDataset, m: int, n: int) -> EmpiricalQRE:
    """Empirical marginals mu_hat(a) = #{a^k = a} / N and likewise for nu."""
    count = data.n_samples
    mu_hat = np.bincount(data.actions_a, minlength=m) / count
    nu_hat = np.bincount(data.actions_b, minlength=n) / count
    return EmpiricalQRE(mu_hat, nu_hat, count)


def sample_episodes(
    spec: MarkovGameSpec,
    policies: StagePolicies,
    initial: np.ndarray,
    n_episodes: int,
    seed: int,
    rep: int = 0,
) -> EpisodeDataset:
    """Roll out T episodes under the stage policies, storing successors."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    rng = stream(seed, rep)
    h_len = spec.H
    t = n_episodes
    states = np.zeros((t, h_len), dtype=np.int64)
    acts_a = np.zeros((t, h_len), dtype=np.int64)
    acts_b = np.zeros((t, h_len), dtype=np.int64)
    nexts = np.zeros((t, h_len), dtype=np.int64)
    s = _draw_categorical(rng, np.cumsum(np.asarray(initial, dtype=float)), t)
    cum_p = np.cumsum(spec.transition, axis=4)
    for h in range(h_len):
        states[:, h] = s
        cum_mu = np.cumsum(policies.mu[h], axis=1)
        cum_nu = np.cumsum(policies.nu[h], axis=1)
        a = (rng.random(t)[:, None] > cum_mu[s]).sum(axis=1)
        b = (rng.random(t)[:, None] > cum_nu[s]).sum(axis=1)
        s_next = (rng.random(t)[:, None] > cum_p[h][s, a, b]).sum(axis=1)
        acts_a[:, h], acts_b[:, h], nexts[:, h] = a, b, s_next
        s = s_next
    return EpisodeDataset(states, acts_a, acts_b, nexts)


def frequency_estimate_markov(
    data: EpisodeDataset, s_len: int, m: int, n: int
) -> EmpiricalMarkovQRE:
    """Per-(h, s) conditional frequencies with the (N_h(s) v 1) denominator."""
    h_len = data.horizon
    counts = np.zeros((h_len, s_len), dtype=np.int64)
    mu_hat = np.zeros((h_len, s_len, m))
    nu_hat = np.zeros((h_len, s_len, n))
    for h in range(h_len):
        s_col = data.states[:, h]
        counts[h] = np.bincount(s_col, minlength=s_len)
        joint_a = np.zeros((s_len, m), dtype=np.int64)
        np.add.at(joint_a, (s_col, data.actions_a[:, h]), 1)
        joint_b = np.zeros((s_len, n), dtype=np.int64)
        np.add.at(joint_b, (s_col, data.actions_b[:, h]), 1)
        denom = np.maximum(counts[h], 1)[:, None]
        mu_hat[h] = joint_a / denom
        nu_hat[h] = joint_b / denom
    visited = counts > 0
    mu_hat[~visited] = 1.0 / m
    nu_hat[~visited] = 1.0 / n
    return EmpiricalMarkovQRE(mu_hat, nu_hat, counts, visited)


def empirical_state_distribution(data: EpisodeDataset, s_len: int) -> np.ndarray:
    """Per-step state frequencies rho_hat with shape (H, S)."""
    h_len = data.horizon
    out = np.zeros((h_len, s_len))
    for h in range(h_len):
        out[h] = np.bincount(data.states[:, h], minlength=s_len) / data.n_episodes
    return out


def write_dataset(data: EpisodeDataset, path: str | Path) -> None:
    """Serialize to the line-delimited interchange format (0-based indices)."""
    t, h_len = data.states.shape
    episode = np.repeat(np.arange(t), h_len)
    step = np.tile(np.arange(h_len), t)
    table = np.column_stack(
        [
            episode,
            step,
            data.states.ravel(),
            data.actions_a.ravel(),
            data.actions_b.ravel(),
            data.next_states.ravel(),
        ]
    )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(DATASET_HEADER + "\n")
        for row in table:
            fh.write(",".join(str(int(x)) for x in row) + "\n")


def read_dataset(path: str | Path) -> EpisodeDataset:
    """Parse the line-delimited interchange format written by write_dataset."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != DATASET_HEADER:
            raise ValueError(f"unexpected dataset header: {header!r}")
        rows = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    if rows.size == 0:
        raise ValueError("dataset file has no records")
    episodes = rows[:, 0]
    steps = rows[:, 1]
    t = int(episodes.max()) + 1
    h_len = int(steps.max()) + 1
    if rows.shape[0] != t * h_len:
        raise ValueError("dataset is ragged: every episode needs every step")
    order = np.lexsort((steps, episodes))
    rows = rows[order]
    shape = (t, h_len)
    return EpisodeDataset(
        rows[:, 2].reshape(shape),
        rows[:, 3].reshape(shape),
        rows[:, 4].reshape(shape),
        rows[:, 5].reshape(shape),
    )


def matrix_to_episode(data: MatrixDataset) -> EpisodeDataset:
    """View a matrix-game dataset as single-step episodes at state 0."""
    t = data.n_samples
    zeros = np.zeros((t, 1), dtype=np.int64)
    return EpisodeDataset(
        zeros,
        data.actions_a.reshape(t, 1),
        data.actions_b.reshape(t, 1),
        zeros,
    )

"""Off-policy evaluation: ratio fitting, chunked doubly-robust estimates, baselines."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import Batch, Dataset, TransitionStats
from .learners import FeatureMap, FeatureSpec, QApprox
from .mdp import Policy

SIGMA_FLOOR = 1e-6
CLIP_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True, eq=False)
class RatioApprox:
    """Linear ratio model ``omega(s, a) = psi(s, a) @ weights`` clipped to ``clip_bounds``."""

    weights: np.ndarray
    features: FeatureMap
    clip_bounds: tuple = CLIP_BOUNDS

    def __post_init__(self):
        lo, hi = self.clip_bounds
        if not 0 < lo <= hi < np.inf:
            raise ValueError(f"clip bounds must satisfy 0 < lo <= hi < inf, got {self.clip_bounds}")

    @classmethod
    def from_table(cls, table, clip_bounds=CLIP_BOUNDS) -> "RatioApprox":
        table = np.asarray(table, dtype=float)
        S, A = table.shape
        return cls(table.ravel().copy(), FeatureSpec("tabular").build(S, A), tuple(clip_bounds))

    @property
    def table(self) -> np.ndarray:
        raw = (self.features.table @ self.weights).reshape(self.features.n_states, self.features.n_actions)
        return np.clip(raw, *self.clip_bounds)

    def evaluate(self, s, a):
        return np.clip(self.features.encode(s, a) @ self.weights, *self.clip_bounds)


def fit_ratio(
    data: Batch | TransitionStats,
    pi: Policy,
    nu: np.ndarray,
    features: FeatureMap | FeatureSpec,
    gamma: float,
    lambda_omega: float = 1e-6,
    clip_bounds: tuple = CLIP_BOUNDS,
) -> RatioApprox:
    """Solve the empirical ratio estimating equation over a linear class.

    With ``omega = psi @ beta`` and test functions equal to the same basis,
    the moment conditions read ``M beta = b`` where

        M = E_n[(psi(S, A) - gamma * sum_a' pi(a'|S') psi(S', a')) psi(S, A)^T]
        b = (1 - gamma) * sum_s nu(s) sum_a pi(a|s) psi(s, a).

    The ridge acts on occupancy-scaled weights ``x = D beta`` where ``D`` holds
    the empirical second moments of each feature: ``x`` minimizes
    ``|M D^-1 x - b|^2 + lambda_omega |x|^2``. For one-hot features ``M D^-1`` is
    ``(I - gamma P_pi)^T`` and well conditioned however rare a pair is.
    Features never observed in the data get zero weight. With
    ``lambda_omega = 0`` the square system is solved directly.
    """
    S, A = pi.probs.shape
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (S,):
        raise ValueError(f"nu must have shape ({S},)")
    fmap = features if isinstance(features, FeatureMap) else features.build(S, A)
    stats = data if isinstance(data, TransitionStats) else data.stats(S, A)
    n = stats.counts.sum()
    if n == 0:
        raise ValueError("cannot fit a ratio on an empty transition set")

    Phi = fmap.table
    # pi-averaged features at each next state, shape (S, d)
    pi_phi = np.einsum("sa,sad->sd", pi.probs, Phi.reshape(S, A, -1))
    C = stats.next_counts.reshape(S * A, S)
    M = (Phi.T @ (stats.counts.ravel()[:, None] * Phi) - gamma * pi_phi.T @ C.T @ Phi) / n
    b = (1.0 - gamma) * nu @ pi_phi

    d = fmap.dimension
    if lambda_omega == 0:
        if np.linalg.matrix_rank(M) < d:
            raise np.linalg.LinAlgError(
                "ratio estimating equation is singular; use lambda_omega > 0"
            )
        beta = np.linalg.solve(M, b)
    else:
        scale = (stats.counts.ravel() @ Phi**2) / n
        active = scale > 0
        N = M[:, active] / scale[active]
        x = np.linalg.solve(N.T @ N + lambda_omega * np.eye(N.shape[1]), N.T @ b)
        beta = np.zeros(d)
        beta[active] = x / scale[active]
    if not np.all(np.isfinite(beta)):
        raise FloatingPointError("ratio solve produced non-finite weights")
    return RatioApprox(beta, fmap, tuple(clip_bounds))


def _table(x) -> np.ndarray:
    return x.table if hasattr(x, "table") else np.asarray(x, dtype=float)


def _td_augmentation(q, pi: Policy, omega, chunk: Batch, gamma: float) -> np.ndarray:
    """Per-transition ``omega(S, A) * (R + gamma * sum_a' pi(a'|S') Q(S', a') - Q(S, A))``."""
    if len(chunk) == 0:
        raise ValueError("chunk is empty")
    qt, wt = _table(q), _table(omega)
    v = (pi.probs * qt).sum(axis=1)
    s, a = chunk.states, chunk.actions
    return wt[s, a] * (chunk.rewards + gamma * v[chunk.next_states] - qt[s, a])


def initial_term(q, pi: Policy, nu, gamma: float) -> float:
    v = (pi.probs * _table(q)).sum(axis=1)
    return float((1.0 - gamma) * np.asarray(nu) @ v)


def dr_value_chunk(q, pi: Policy, omega, chunk: Batch, nu, gamma: float) -> float:
    """Doubly-robust value of ``pi`` on one chunk.

    ``(1 - gamma) E_nu[sum_a pi(a|S0) Q(S0, a)]`` (exact over the finite state
    space) plus the chunk mean of the ratio-weighted TD residual.
    """
    aug = _td_augmentation(q, pi, omega, chunk, gamma)
    return initial_term(q, pi, nu, gamma) + float(aug.mean())


class VarianceEstimate(NamedTuple):
    sigma2: float
    sigma: float
    clamped: bool


def dr_variance_chunk(
    q, pi: Policy, omega, chunk: Batch, gamma: float, sigma_floor: float = SIGMA_FLOOR
) -> VarianceEstimate:
    """Uncentered second moment of the augmentation term; ``sigma`` is floored."""
    aug = _td_augmentation(q, pi, omega, chunk, gamma)
    sigma2 = float(np.mean(aug**2))
    sigma = np.sqrt(sigma2)
    return VarianceEstimate(sigma2, float(max(sigma, sigma_floor)), bool(sigma < sigma_floor))


@dataclass(frozen=True)
class ChunkEvaluation:
    o: int
    value: float
    sigma: float
    clamped: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive (floored upstream), got {self.sigma}")


def evaluate_chunk(
    o: int, q, pi: Policy, omega, chunk: Batch, nu, gamma: float, sigma_floor: float = SIGMA_FLOOR
) -> ChunkEvaluation:
    aug = _td_augmentation(q, pi, omega, chunk, gamma)
    value = initial_term(q, pi, nu, gamma) + float(aug.mean())
    sigma = float(np.sqrt(np.mean(aug**2)))
    return ChunkEvaluation(o, value, max(sigma, sigma_floor), sigma < sigma_floor)


def _values_sigmas(chunk_evals: Sequence[ChunkEvaluation]):
    if len(chunk_evals) == 0:
        raise ValueError("need at least one chunk evaluation")
    values = np.array([c.value for c in chunk_evals])
    sigmas = np.array([c.sigma for c in chunk_evals])
    return values, sigmas


def aggregate_value(chunk_evals: Sequence[ChunkEvaluation]) -> float:
    """Inverse-sigma weighted mean of the per-chunk values."""
    values, sigmas = _values_sigmas(chunk_evals)
    w = 1.0 / sigmas
    return float(np.sum(w * values) / np.sum(w))


def aggregate_sigma(chunk_evals: Sequence[ChunkEvaluation]) -> float:
    """Harmonic mean of the per-chunk sigmas."""
    _, sigmas = _values_sigmas(chunk_evals)
    return float(len(sigmas) / np.sum(1.0 / sigmas))


@dataclass
class CandidateEvaluation:
    candidate_id: str
    chunk_evals: list = field(default_factory=list)

    @property
    def value_agg(self) -> float:
        return aggregate_value(self.chunk_evals)

    @property
    def sigma_agg(self) -> float:
        return aggregate_sigma(self.chunk_evals)

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "chunks": [
                {"o": c.o, "value": c.value, "sigma": c.sigma, "clamped": c.clamped}
                for c in self.chunk_evals
            ],
            "value_agg": self.value_agg,
            "sigma_agg": self.sigma_agg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateEvaluation":
        return cls(d["candidate_id"], [ChunkEvaluation(**c) for c in d["chunks"]])


def naive_greedy_score(q, pi: Policy, nu) -> float:
    """Plug-in score ``E_nu[sum_a pi(a|S0) Q(S0, a)]`` with no data correction."""
    return float(np.asarray(nu) @ (pi.probs * _table(q)).sum(axis=1))


def marginal_is_value(omega, dataset: Dataset | Batch) -> float:
    """Episode average of ``(1/T) sum_t omega(S_t, A_t) R_t``.

    With equal-length episodes this is the mean over all transitions.
    """
    batch = dataset.batch() if isinstance(dataset, Dataset) else dataset
    if len(batch) == 0:
        raise ValueError("dataset is empty")
    w = _table(omega)[batch.states, batch.actions]
    return float(np.mean(w * batch.rewards))


def wis_value(omega, dataset: Dataset | Batch) -> float:
    """Self-normalized ``sum omega R / sum omega`` over all transitions."""
    batch = dataset.batch() if isinstance(dataset, Dataset) else dataset
    if len(batch) == 0:
        raise ValueError("dataset is empty")
    w = _table(omega)[batch.states, batch.actions]
    return float(np.sum(w * batch.rewards) / np.sum(w))

"""Finite MDPs, policies and exact dynamic-programming oracles.

Everything here is a direct linear solve or a finite matrix recursion, so the
results are exact up to floating point and can be used as ground truth for the
statistical estimators in :mod:`offline_pms.ope`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

_ATOL = 1e-12


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP.

    Parameters
    ----------
    transition : array, shape (n_states, n_actions, n_states)
        ``transition[s, a, s']`` is the probability of moving to ``s'``.
    reward : array, shape (n_states, n_actions)
        Expected immediate reward ``r(s, a)``.
    gamma : float
        Discount factor in ``[0, 1)``.
    init_dist : array, shape (n_states,)
        Reference distribution of the initial state, used in the value
        ``(1 - gamma) * sum_s V(s) init_dist(s)``.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    init_dist: np.ndarray
    name: str = "mdp"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        nu = _frozen(self.init_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if r.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {r.shape}")
        if nu.shape != (S,):
            raise ValueError(f"init_dist must have shape {(S,)}, got {nu.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, rtol=0, atol=_ATOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if np.any(nu < 0) or abs(nu.sum() - 1.0) > _ATOL:
            raise ValueError("init_dist must be nonnegative and sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward must be finite")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "init_dist", nu)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary Markov policy stored as a table ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {p.shape}")
        if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=_ATOL):
            raise ValueError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy_actions(self) -> np.ndarray:
        return self.probs.argmax(axis=1)

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


def _check_dims(mdp: TabularMdp, pi: Policy) -> None:
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {pi.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def state_transition_matrix(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) p(s'|s, a)``."""
    _check_dims(mdp, pi)
    return np.einsum("sa,sat->st", pi.probs, mdp.transition)


def state_value_exact(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """``V^pi`` from ``(I - gamma P_pi) V = r_pi``."""
    P_pi = state_transition_matrix(mdp, pi)
    r_pi = (pi.probs * mdp.reward).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


def policy_value_exact(mdp: TabularMdp, pi: Policy) -> float:
    """Normalized value ``(1 - gamma) * sum_s init_dist(s) V^pi(s)``."""
    V = state_value_exact(mdp, pi)
    return float((1.0 - mdp.gamma) * mdp.init_dist @ V)


def q_value_exact(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    V = state_value_exact(mdp, pi)
    return mdp.reward + mdp.gamma * mdp.transition @ V


def optimal_q_value(mdp: TabularMdp, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Optimal Q-function by value iteration, stopped at sup-norm change ``tol``."""
    Q = np.zeros_like(mdp.reward)
    for _ in range(max_iter):
        Q_new = mdp.reward + mdp.gamma * mdp.transition @ Q.max(axis=1)
        if np.max(np.abs(Q_new - Q)) <= tol:
            return Q_new
        Q = Q_new
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def stationary_distribution(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """Stationary state-action distribution ``p_inf[s, a]`` of the chain under ``pi``.

    Raises ``ValueError`` unless the state chain has exactly one closed
    communicating class, which is the condition for uniqueness.
    """
    P_pi = state_transition_matrix(mdp, pi)
    S = mdp.n_states
    adjacency = P_pi > 0
    n_comp, labels = connected_components(adjacency, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if not adjacency[members][:, ~members].any():
            closed.append(c)
    if len(closed) != 1:
        raise ValueError(
            f"chain under the policy has {len(closed)} closed communicating classes; "
            "a unique stationary distribution requires exactly one"
        )
    # p (P - I) = 0 with sum(p) = 1; the stacked system has full column rank here
    lhs = np.vstack([P_pi.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    return p[:, None] * pi.probs


def discounted_visitation(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    """``d^pi[s, a] = (1 - gamma) sum_t gamma^t p_t^pi(s, a)`` started from ``init_dist``."""
    P_pi = state_transition_matrix(mdp, pi)
    d_state = (1.0 - mdp.gamma) * np.linalg.solve(
        (np.eye(mdp.n_states) - mdp.gamma * P_pi).T, mdp.init_dist
    )
    return d_state[:, None] * pi.probs


def average_visitation(
    mdp: TabularMdp, behavior: Policy, horizon: int, start: np.ndarray | None = None
) -> np.ndarray:
    """Time-averaged occupancy ``(1/T) sum_{t<T} p_t^b(s, a)``.

    ``start`` is the state distribution at ``t = 0``; it defaults to the MDP's
    ``init_dist``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    P_b = state_transition_matrix(mdp, behavior)
    p = mdp.init_dist if start is None else np.asarray(start, dtype=float)
    if p.shape != (mdp.n_states,):
        raise ValueError(f"start distribution must have shape ({mdp.n_states},)")
    total = np.zeros(mdp.n_states)
    for _ in range(horizon):
        total += p
        p = p @ P_b
    return (total / horizon)[:, None] * behavior.probs


@dataclass(frozen=True, eq=False)
class RatioTable:
    """Exact discounted visitation ratio.

    ``omega`` is NaN where the behavior occupancy is zero; ``defined`` marks
    the entries where the ratio exists.
    """

    omega: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.denominator > 0


def visitation_ratio_exact(
    mdp: TabularMdp,
    pi: Policy,
    behavior: Policy,
    horizon: int,
    data_start: np.ndarray | None = None,
) -> RatioTable:
    """Ratio of the target's discounted visitation to the behavior's average occupancy.

    The behavior occupancy starts from ``data_start`` (default ``init_dist``),
    i.e. the distribution of the first logged state.
    """
    _check_dims(mdp, behavior)
    num = discounted_visitation(mdp, pi)
    den = average_visitation(mdp, behavior, horizon, start=data_start)
    omega = np.full_like(num, np.nan)
    pos = den > 0
    omega[pos] = num[pos] / den[pos]
    return RatioTable(_frozen(omega), _frozen(num), _frozen(den))

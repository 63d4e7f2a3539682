"""Built-in tabular environments and seeded offline data collection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .mdp import Policy, TabularMdp

# action ids for the gridworld
NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
_MOVES = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}
_PERPENDICULAR = {NORTH: (EAST, WEST), SOUTH: (EAST, WEST), EAST: (NORTH, SOUTH), WEST: (NORTH, SOUTH)}

FROZEN_LAKE_4X4 = ("SFFF", "FHFH", "FFFH", "HFFG")


@dataclass(frozen=True)
class GridworldSpec:
    """FrozenLake-style maze.

    Cells are numbered row-major, ``cell = row * width + col``. With
    ``absorbing=True`` holes and the goal are zero-reward self-loops; with
    ``absorbing=False`` any action taken there restarts the agent from the
    initial distribution, which keeps the chain ergodic under soft policies.
    """

    width: int = 4
    height: int = 4
    hole_cells: tuple = (5, 7, 11, 12)
    goal_cell: int = 15
    start_cell: int = 0
    slip_prob: float = 0.0
    step_reward: float = 0.0
    goal_reward: float = 1.0
    hole_reward: float = 0.0
    absorbing: bool = True

    def __post_init__(self):
        n = self.width * self.height
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        cells = [self.goal_cell, self.start_cell, *self.hole_cells]
        if any(not 0 <= c < n for c in cells):
            raise ValueError(f"cell ids must lie in [0, {n})")
        if self.start_cell == self.goal_cell or self.start_cell in self.hole_cells:
            raise ValueError("start cell must not be terminal")
        if self.goal_cell in self.hole_cells:
            raise ValueError("goal cell cannot be a hole")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise ValueError(f"slip_prob must lie in [0, 1], got {self.slip_prob}")

    @classmethod
    def from_layout(cls, rows, **kwargs) -> "GridworldSpec":
        """Build from strings of ``S`` (start), ``F`` (floor), ``H`` (hole), ``G`` (goal)."""
        rows = [r.strip() for r in rows]
        width, height = len(rows[0]), len(rows)
        if any(len(r) != width for r in rows):
            raise ValueError("layout rows must have equal length")
        flat = "".join(rows)
        if flat.count("S") != 1 or flat.count("G") != 1:
            raise ValueError("layout needs exactly one S and one G")
        return cls(
            width=width,
            height=height,
            hole_cells=tuple(i for i, c in enumerate(flat) if c == "H"),
            goal_cell=flat.index("G"),
            start_cell=flat.index("S"),
            **kwargs,
        )

    @property
    def terminal_cells(self) -> tuple:
        return (*self.hole_cells, self.goal_cell)


def _step(spec: GridworldSpec, cell: int, action: int) -> int:
    row, col = divmod(cell, spec.width)
    dr, dc = _MOVES[action]
    r2, c2 = row + dr, col + dc
    if not (0 <= r2 < spec.height and 0 <= c2 < spec.width):
        return cell
    return r2 * spec.width + c2


def build_gridworld(spec: GridworldSpec, gamma: float, init_dist_mode: str = "start") -> TabularMdp:
    """Four-action gridworld; reward is paid on entering a cell (goal, hole or floor)."""
    S, A = spec.width * spec.height, 4
    terminal = set(spec.terminal_cells)
    if init_dist_mode == "start":
        nu = np.zeros(S)
        nu[spec.start_cell] = 1.0
    elif init_dist_mode == "uniform":
        nu = np.array([0.0 if s in terminal else 1.0 for s in range(S)])
        nu /= nu.sum()
    else:
        raise ValueError(f"unknown init_dist_mode {init_dist_mode!r}")

    enter_reward = np.full(S, spec.step_reward)
    enter_reward[list(spec.hole_cells)] = spec.hole_reward
    enter_reward[spec.goal_cell] = spec.goal_reward

    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            if s in terminal:
                if spec.absorbing:
                    P[s, a, s] = 1.0
                else:
                    P[s, a] = nu
                continue
            side = spec.slip_prob / 2.0
            for move, prob in [(a, 1.0 - spec.slip_prob), *((p, side) for p in _PERPENDICULAR[a])]:
                if prob > 0:
                    P[s, a, _step(spec, s, move)] += prob
            R[s, a] = P[s, a] @ enter_reward
    return TabularMdp(P, R, gamma, nu, name="gridworld", meta={"width": spec.width, "height": spec.height})


@dataclass(frozen=True)
class ChainSpec:
    """Linear chain ``0 - 1 - ... - (n_states - 1)``.

    Action 1 moves forward with probability ``forward_prob`` (otherwise the
    agent stays put); action 0 moves back one state. Every transition that
    lands in the last state pays ``reward_at_end``.
    """

    n_states: int = 5
    forward_prob: float = 0.8
    reward_at_end: float = 1.0

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError(f"chain needs at least 2 states, got {self.n_states}")
        if not 0.0 <= self.forward_prob <= 1.0:
            raise ValueError(f"forward_prob must lie in [0, 1], got {self.forward_prob}")


BACK, FORWARD = 0, 1


def build_chain(spec: ChainSpec, gamma: float, init_dist=None) -> TabularMdp:
    S = spec.n_states
    P = np.zeros((S, 2, S))
    for s in range(S):
        P[s, BACK, max(s - 1, 0)] = 1.0
        P[s, FORWARD, min(s + 1, S - 1)] += spec.forward_prob
        P[s, FORWARD, s] += 1.0 - spec.forward_prob
    R = spec.reward_at_end * P[:, :, S - 1]
    if init_dist is None:
        init_dist = np.eye(S)[0]
    return TabularMdp(P, R, gamma, init_dist, name="chain")


def make_behavior_policy(base: Policy, epsilon: float) -> Policy:
    """Epsilon-soft mixture ``(1 - eps) * base + eps / |A|``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    return Policy((1.0 - epsilon) * base.probs + epsilon / base.n_actions)


def _sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF draw, one row of cdf per uniform; rows are renormalized so
    # the last entry is exactly 1 and u < 1 always lands somewhere
    cdf = cdf / cdf[:, -1:]
    return (u[:, None] < cdf).argmax(axis=1)


def episode_seeds(seed: int, n: int) -> list:
    return [np.random.SeedSequence([int(seed), i]) for i in range(n)]


def collect_trajectories(
    mdp: TabularMdp,
    behavior: Policy,
    n: int,
    horizon: int,
    seed: int,
    reward_noise: float = 0.0,
    start_dist: np.ndarray | None = None,
    meta: dict | None = None,
) -> Dataset:
    """Roll out ``n`` episodes of length ``horizon`` under ``behavior``.

    Episode ``i`` draws all of its randomness from its own generator seeded
    by ``(seed, i)``, so the output does not depend on how episodes are
    batched. Initial states come from ``start_dist`` (default the MDP's
    ``init_dist``). Observed rewards are ``r(s, a)`` plus optional Gaussian
    noise with standard deviation ``reward_noise``.
    """
    if n < 1 or horizon < 1:
        raise ValueError("n and horizon must be >= 1")
    if behavior.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("behavior policy does not match the MDP")
    start = mdp.init_dist if start_dist is None else np.asarray(start_dist, dtype=float)

    # per-episode draws: [init, actions(T), moves(T)] uniforms + T normals
    uniforms = np.empty((n, 1 + 2 * horizon))
    noise = np.zeros((n, horizon))
    for i, ss in enumerate(episode_seeds(seed, n)):
        rng = np.random.default_rng(ss)
        uniforms[i] = rng.random(1 + 2 * horizon)
        if reward_noise > 0:
            noise[i] = rng.standard_normal(horizon)

    S, A = mdp.n_states, mdp.n_actions
    act_cdf = np.cumsum(behavior.probs, axis=1)
    trans_cdf = np.cumsum(mdp.transition.reshape(S * A, S), axis=1)
    states = np.empty((n, horizon), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    next_states = np.empty((n, horizon), dtype=np.int64)
    s = _sample_rows(np.broadcast_to(np.cumsum(start), (n, S)), uniforms[:, 0])
    for t in range(horizon):
        a = _sample_rows(act_cdf[s], uniforms[:, 1 + t])
        s2 = _sample_rows(trans_cdf[s * A + a], uniforms[:, 1 + horizon + t])
        states[:, t], actions[:, t], next_states[:, t] = s, a, s2
        s = s2
    rewards = mdp.reward[states, actions] + reward_noise * noise
    info = {"env": mdp.name, "seed": int(seed), "reward_noise": reward_noise}
    info.update(meta or {})
    return Dataset(states, actions, rewards, next_states, info)

"""Fitted Q-iteration over linear feature classes and the candidate grid."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataset import Batch, TransitionStats
from .mdp import Policy


@dataclass(frozen=True)
class FeatureSpec:
    """Recipe for a feature map on a finite state-action space.

    ``kind`` is ``"tabular"`` (one-hot in ``(s, a)``) or ``"coarse-tiles"``
    (one-hot in ``(tile(s), a)``). Tiles group ``tile_size`` consecutive state
    ids, or ``tile_size x tile_size`` blocks of cells when ``grid_width`` is set.
    """

    kind: str = "tabular"
    tile_size: int = 1
    grid_width: int | None = None

    def __post_init__(self):
        if self.kind not in ("tabular", "coarse-tiles"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")

    @property
    def label(self) -> str:
        if self.kind == "tabular":
            return "tab"
        return f"tile{self.tile_size}"

    def build(self, n_states: int, n_actions: int) -> "FeatureMap":
        if self.kind == "tabular":
            tile = np.arange(n_states)
        elif self.grid_width:
            row, col = np.divmod(np.arange(n_states), self.grid_width)
            tiles_per_row = -(-self.grid_width // self.tile_size)
            tile = (row // self.tile_size) * tiles_per_row + col // self.tile_size
        else:
            tile = np.arange(n_states) // self.tile_size
        _, tile = np.unique(tile, return_inverse=True)
        n_tiles = tile.max() + 1
        table = np.zeros((n_states, n_actions, n_tiles * n_actions))
        for a in range(n_actions):
            table[np.arange(n_states), a, tile * n_actions + a] = 1.0
        return FeatureMap(self, table.reshape(n_states * n_actions, -1), n_states, n_actions)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature table with one row per ``(s, a)`` pair (row ``s * n_actions + a``)."""

    spec: FeatureSpec
    table: np.ndarray
    n_states: int
    n_actions: int

    @property
    def dimension(self) -> int:
        return self.table.shape[1]

    def encode(self, s, a) -> np.ndarray:
        return self.table[np.asarray(s) * self.n_actions + np.asarray(a)]


@dataclass(frozen=True, eq=False)
class QApprox:
    weights: np.ndarray
    features: FeatureMap

    @classmethod
    def from_table(cls, table) -> "QApprox":
        table = np.asarray(table, dtype=float)
        S, A = table.shape
        return cls(table.ravel().copy(), FeatureSpec("tabular").build(S, A))

    @property
    def table(self) -> np.ndarray:
        """Q values as an ``(n_states, n_actions)`` array."""
        return (self.features.table @ self.weights).reshape(
            self.features.n_states, self.features.n_actions
        )

    def evaluate(self, s, a):
        return self.features.encode(s, a) @ self.weights

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "features": asdict(self.features.spec),
            "n_states": self.features.n_states,
            "n_actions": self.features.n_actions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QApprox":
        fmap = FeatureSpec(**d["features"]).build(d["n_states"], d["n_actions"])
        return cls(np.asarray(d["weights"], dtype=float), fmap)


@dataclass(frozen=True)
class CandidateConfig:
    id: str
    features: FeatureSpec
    iterations: int
    ridge: float
    gamma: float

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


def fqi_fit(
    data: Batch | TransitionStats, config: CandidateConfig, n_states: int, n_actions: int
) -> QApprox:
    """Fitted Q-iteration: ``K`` rounds of ridge regression on Bellman targets.

    ``Q_0 = 0``; round ``k`` regresses ``R + gamma * max_a' Q_{k-1}(S', a')``
    onto the features of ``(S, A)``. The least-squares problem only depends on
    per-pair counts, reward sums and next-state counts, so it is solved from
    those statistics rather than transition by transition.
    """
    stats = data if isinstance(data, TransitionStats) else data.stats(n_states, n_actions)
    if stats.n == 0:
        raise ValueError("cannot fit on an empty transition set")
    fmap = config.features.build(n_states, n_actions)
    Phi = fmap.table
    counts = stats.counts.ravel()
    gram = Phi.T @ (counts[:, None] * Phi)
    reward_part = Phi.T @ stats.reward_sum.ravel()
    next_counts = stats.next_counts.reshape(n_states * n_actions, n_states)

    w = np.zeros(fmap.dimension)
    if config.iterations > 0:
        if config.ridge == 0 and np.linalg.matrix_rank(gram) < fmap.dimension:
            raise np.linalg.LinAlgError(
                "FQI normal equations are singular (some features never observed); use ridge > 0"
            )
        # factor once; every round solves against the same matrix
        factor = cho_factor(gram + config.ridge * np.eye(fmap.dimension))
        for _ in range(config.iterations):
            v_next = (Phi @ w).reshape(n_states, n_actions).max(axis=1)
            w = cho_solve(factor, reward_part + config.gamma * Phi.T @ (next_counts @ v_next))
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("FQI produced non-finite weights")
    return QApprox(w, fmap)


def greedy_policy(q: QApprox | np.ndarray, n_states: int | None = None, n_actions: int | None = None) -> Policy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    table = q.table if isinstance(q, QApprox) else np.asarray(q, dtype=float)
    if n_states is not None and table.shape != (n_states, n_actions):
        raise ValueError(f"Q table shape {table.shape} != ({n_states}, {n_actions})")
    return Policy.deterministic(table.argmax(axis=1), table.shape[1])


def candidate_grid(grid_spec: dict) -> list:
    """Cartesian product of the ``features``, ``iterations`` and ``ridge`` axes.

    ``features`` entries may be :class:`FeatureSpec` instances or dicts of
    their fields. Order is features, then iterations, then ridge.
    """
    axes = {}
    for key in ("features", "iterations", "ridge"):
        values = list(grid_spec.get(key, []))
        if not values:
            raise ValueError(f"candidate grid axis {key!r} is empty")
        axes[key] = values
    gamma = grid_spec.get("gamma", 0.9)
    feats = [f if isinstance(f, FeatureSpec) else FeatureSpec(**f) for f in axes["features"]]
    out = []
    for feat, K, lam in itertools.product(feats, axes["iterations"], axes["ridge"]):
        cid = f"{feat.label}-K{int(K)}-lam{float(lam):g}"
        out.append(CandidateConfig(cid, feat, int(K), float(lam), float(gamma)))
    ids = [c.id for c in out]
    if len(set(ids)) != len(ids):
        raise ValueError("candidate grid contains duplicate entries")
    return out

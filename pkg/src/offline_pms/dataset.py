"""Logged trajectories, ordered chunking, and the JSON-lines dataset format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

FORMAT_VERSION = 1


class Transition(NamedTuple):
    episode: int
    time: int
    state: int
    action: int
    reward: float
    next_state: int


@dataclass(frozen=True, eq=False)
class Batch:
    """Flat arrays of ``(S, A, R, S')`` tuples, the unit every estimator consumes."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return self.states.size

    def stats(self, n_states: int, n_actions: int) -> "TransitionStats":
        flat = self.states * n_actions + self.actions
        SA = n_states * n_actions
        counts = np.bincount(flat, minlength=SA).astype(float)
        reward_sum = np.bincount(flat, weights=self.rewards, minlength=SA)
        next_counts = np.bincount(
            flat * n_states + self.next_states, minlength=SA * n_states
        ).astype(float)
        return TransitionStats(
            counts.reshape(n_states, n_actions),
            reward_sum.reshape(n_states, n_actions),
            next_counts.reshape(n_states, n_actions, n_states),
        )


class TransitionStats(NamedTuple):
    """Sufficient statistics of a batch on a finite state-action space.

    Additive over disjoint batches, so cumulative chunks are running sums.
    """

    counts: np.ndarray
    reward_sum: np.ndarray
    next_counts: np.ndarray

    def __add__(self, other):
        return TransitionStats(
            self.counts + other.counts,
            self.reward_sum + other.reward_sum,
            self.next_counts + other.next_counts,
        )

    @property
    def n(self) -> int:
        return int(round(self.counts.sum()))


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n_episodes`` trajectories of fixed length ``horizon``.

    Arrays have shape ``(n_episodes, horizon)``; entry ``[i, t]`` is the
    transition ``(S_{i,t}, A_{i,t}, R_{i,t}, S_{i,t+1})``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = np.shape(self.states)
        if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
            raise ValueError(f"dataset arrays must be (n_episodes, horizon), got {shape}")
        for name, dtype in [
            ("states", np.int64),
            ("actions", np.int64),
            ("rewards", np.float64),
            ("next_states", np.int64),
        ]:
            arr = np.array(getattr(self, name), dtype=dtype)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.array_equal(self.next_states[:, :-1], self.states[:, 1:]):
            raise ValueError("next_state at (i, t) must equal state at (i, t + 1)")

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.states.size

    def transitions(self) -> Iterator[Transition]:
        for i in range(self.n_episodes):
            for t in range(self.horizon):
                yield Transition(
                    i,
                    t,
                    int(self.states[i, t]),
                    int(self.actions[i, t]),
                    float(self.rewards[i, t]),
                    int(self.next_states[i, t]),
                )

    @classmethod
    def from_transitions(cls, transitions, n_episodes: int, horizon: int, meta=None) -> "Dataset":
        transitions = list(transitions)
        if len(transitions) != n_episodes * horizon:
            raise ValueError(
                f"expected {n_episodes * horizon} transitions, got {len(transitions)}"
            )
        arrays = {k: np.zeros((n_episodes, horizon), dtype=float) for k in Transition._fields[2:]}
        seen = np.zeros((n_episodes, horizon), dtype=bool)
        for tr in transitions:
            tr = Transition(*tr)
            if not (0 <= tr.episode < n_episodes and 0 <= tr.time < horizon):
                raise ValueError(f"transition index out of range: {tr}")
            if seen[tr.episode, tr.time]:
                raise ValueError(f"duplicate transition at ({tr.episode}, {tr.time})")
            seen[tr.episode, tr.time] = True
            for k in arrays:
                arrays[k][tr.episode, tr.time] = getattr(tr, k)
        return cls(
            arrays["state"], arrays["action"], arrays["reward"], arrays["next_state"], dict(meta or {})
        )

    def batch(self, index: np.ndarray | None = None) -> Batch:
        """Flatten the transitions at ``index`` (rows of ``(episode, time)``), or all of them."""
        if index is None:
            return Batch(
                self.states.ravel(), self.actions.ravel(), self.rewards.ravel(), self.next_states.ravel()
            )
        index = np.asarray(index, dtype=int).reshape(-1, 2)
        i, t = index[:, 0], index[:, 1]
        return Batch(self.states[i, t], self.actions[i, t], self.rewards[i, t], self.next_states[i, t])

    def head(self, n_episodes: int) -> "Dataset":
        return Dataset(
            self.states[:n_episodes],
            self.actions[:n_episodes],
            self.rewards[:n_episodes],
            self.next_states[:n_episodes],
            dict(self.meta),
        )


@dataclass(frozen=True, eq=False)
class ChunkPartition:
    """Ordered split ``J_1, ..., J_O`` of the ``(episode, time)`` index set.

    Chunk ``o`` holds every episode's time steps in ``blocks[o]``; time steps
    beyond the last block are dropped so that every chunk has the same size.
    """

    chunks: list
    blocks: list
    n_dropped: int

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def chunk_size(self) -> int:
        return len(self.chunks[0])

    @property
    def n_retained(self) -> int:
        return sum(len(c) for c in self.chunks)


def partition_dataset(dataset: Dataset, n_chunks: int) -> ChunkPartition:
    """Split into ``n_chunks`` contiguous time blocks of width ``horizon // n_chunks``."""
    T, n = dataset.horizon, dataset.n_episodes
    if n_chunks < 2:
        raise ValueError(f"need at least 2 chunks, got {n_chunks}")
    if n_chunks > T:
        raise ValueError(f"cannot split horizon {T} into {n_chunks} time blocks")
    width = T // n_chunks
    episodes = np.arange(n)
    chunks, blocks = [], []
    for o in range(n_chunks):
        times = np.arange(o * width, (o + 1) * width)
        ii, tt = np.meshgrid(episodes, times, indexing="ij")
        chunks.append(np.column_stack([ii.ravel(), tt.ravel()]))
        blocks.append((o * width, (o + 1) * width))
    return ChunkPartition(chunks, blocks, n_dropped=n * (T - width * n_chunks))


def save_jsonl(dataset: Dataset, path) -> Path:
    path = Path(path)
    header = {
        "type": "header",
        "format_version": FORMAT_VERSION,
        "n_episodes": dataset.n_episodes,
        "horizon": dataset.horizon,
        "env": dataset.meta.get("env"),
        "behavior": dataset.meta.get("behavior"),
        "seed": dataset.meta.get("seed"),
    }
    header.update({k: v for k, v in dataset.meta.items() if k not in header})
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in dataset.transitions():
            rec = {
                "episode": tr.episode,
                "t": tr.time,
                "state": tr.state,
                "action": tr.action,
                "reward": tr.reward,
                "next_state": tr.next_state,
            }
            fh.write(json.dumps(rec) + "\n")
    return path


def load_jsonl(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("type") != "header":
            raise ValueError(f"{path}: first line must be a header record")
        transitions = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            transitions.append(
                Transition(
                    rec["episode"], rec["t"], rec["state"], rec["action"], rec["reward"], rec["next_state"]
                )
            )
    meta = {k: v for k, v in header.items() if k not in ("type", "format_version", "n_episodes", "horizon")}
    return Dataset.from_transitions(transitions, header["n_episodes"], header["horizon"], meta)

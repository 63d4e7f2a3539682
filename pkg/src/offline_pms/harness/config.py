"""Experiment configuration: a YAML tree with keys env, behavior, data,
candidates, selection, selectors, replications, sweep, output and seed."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..envs import FROZEN_LAKE_4X4, ChainSpec, GridworldSpec, build_chain, build_gridworld, make_behavior_policy
from ..learners import FeatureSpec, candidate_grid, greedy_policy
from ..mdp import Policy, TabularMdp, optimal_q_value, stationary_distribution
from ..selection import SelectionConfig

SELECTORS = ("pms", "lepski", "combined", "naive", "is", "wis")

DEFAULTS = {
    "env": {
        "kind": "gridworld",
        "layout": list(FROZEN_LAKE_4X4),
        "slip_prob": 0.2,
        "absorbing": False,
        "gamma": 0.9,
        "init_dist": "uniform",
    },
    "behavior": {"base": "optimal", "epsilon": 0.5},
    "data": {"n_episodes": 200, "horizon": 100, "reward_noise": 0.0, "start": "stationary"},
    "candidates": {
        "features": [
            {"kind": "tabular"},
            {"kind": "coarse-tiles", "tile_size": 2, "grid_width": 4},
        ],
        "iterations": [1, 5, 20, 100],
        "ridge": [1e-4, 1e-1],
    },
    "selection": {
        "n_chunks": 20,
        "alpha": 0.01,
        "refit_full": True,
        "lambda_omega": 1e-6,
        "clip_bounds": [1e-3, 1e3],
        "sigma_floor": 1e-6,
    },
    "selectors": list(SELECTORS),
    "replications": 10,
    "top_fraction": 0.1,
    "topk": [1, 2, 5],
    "sweep": {},
    "output": {"dir": "results"},
    "seed": 0,
}

OUTPUT_ENV = "OFFLINE_PMS_OUTPUT"
WORKERS_ENV = "OFFLINE_PMS_THREADS"


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment tree; ``raw`` keeps the merged dict for hashing and dumps."""

    raw: dict

    def __post_init__(self):
        self.raw = _merge(DEFAULTS, self.raw)
        r = self.raw
        if int(r["replications"]) < 1:
            raise ValueError("replications must be >= 1")
        unknown = set(r["selectors"]) - set(SELECTORS)
        if unknown or not r["selectors"]:
            raise ValueError(f"selectors must be a nonempty subset of {SELECTORS}, got {r['selectors']}")
        if r["env"]["kind"] not in ("gridworld", "chain"):
            raise ValueError(f"unknown env kind {r['env']['kind']!r}")
        if r["data"]["start"] not in ("stationary", "nu"):
            raise ValueError("data.start must be 'stationary' or 'nu'")
        # fail early on malformed pieces
        self.build_env()
        self.candidates()
        self.selection_config()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls(yaml.safe_load(fh) or {})

    def with_overrides(self, **sections) -> "ExperimentConfig":
        return ExperimentConfig(_merge(self.raw, sections))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def replications(self) -> int:
        return int(self.raw["replications"])

    @property
    def selectors(self) -> list:
        return list(self.raw["selectors"])

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.raw["output"]["dir"])

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def build_env(self) -> tuple:
        """Return ``(mdp, behavior, start_dist)`` for data collection."""
        e = self.raw["env"]
        if e["kind"] == "gridworld":
            keys = ("slip_prob", "absorbing", "step_reward", "goal_reward", "hole_reward")
            extra = {k: e[k] for k in keys if k in e}
            spec = GridworldSpec.from_layout(e["layout"], **extra)
            mdp = build_gridworld(spec, e["gamma"], e.get("init_dist", "uniform"))
        else:
            spec = ChainSpec(
                e.get("n_states", 5), e.get("forward_prob", 0.8), e.get("reward_at_end", 1.0)
            )
            mdp = build_chain(spec, e["gamma"])
        b = self.raw["behavior"]
        if b["base"] == "optimal":
            base = greedy_policy(optimal_q_value(mdp))
        elif b["base"] == "uniform":
            base = Policy.uniform(mdp.n_states, mdp.n_actions)
        else:
            raise ValueError(f"behavior.base must be 'optimal' or 'uniform', got {b['base']!r}")
        behavior = make_behavior_policy(base, float(b["epsilon"]))
        if self.raw["data"]["start"] == "stationary":
            start = stationary_distribution(mdp, behavior).sum(axis=1)
        else:
            start = mdp.init_dist
        return mdp, behavior, start

    def candidates(self) -> list:
        c = dict(self.raw["candidates"])
        c.setdefault("gamma", self.raw["env"]["gamma"])
        return candidate_grid(c)

    def selection_config(self) -> SelectionConfig:
        s = self.raw["selection"]
        return SelectionConfig(
            n_chunks=int(s["n_chunks"]),
            alpha=float(s["alpha"]),
            refit_full=bool(s["refit_full"]),
            ratio_features=FeatureSpec(**s.get("ratio_features", {"kind": "tabular"})),
            lambda_omega=float(s["lambda_omega"]),
            clip_bounds=tuple(float(x) for x in s["clip_bounds"]),
            sigma_floor=float(s["sigma_floor"]),
        )

    def replication_seed(self, rep: int) -> int:
        return int(np.random.SeedSequence([self.seed, rep]).generate_state(1)[0])

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.raw, fh, sort_keys=True)


def env_id(mdp: TabularMdp) -> str:
    return mdp.name

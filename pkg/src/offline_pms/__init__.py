"""Pessimistic model selection for offline reinforcement learning on tabular MDPs."""
from .dataset import Batch, ChunkPartition, Dataset, Transition, load_jsonl, partition_dataset, save_jsonl
from .envs import (
    ChainSpec,
    GridworldSpec,
    build_chain,
    build_gridworld,
    collect_trajectories,
    make_behavior_policy,
)
from .learners import CandidateConfig, FeatureSpec, QApprox, candidate_grid, fqi_fit, greedy_policy
from .mdp import (
    Policy,
    RatioTable,
    TabularMdp,
    optimal_q_value,
    policy_value_exact,
    q_value_exact,
    stationary_distribution,
    visitation_ratio_exact,
)
from .ope import (
    ChunkEvaluation,
    RatioApprox,
    aggregate_sigma,
    aggregate_value,
    dr_value_chunk,
    dr_variance_chunk,
    fit_ratio,
    marginal_is_value,
    naive_greedy_score,
    wis_value,
)
from .selection import (
    SelectionConfig,
    SelectionReport,
    combined_select,
    lepski_select,
    normal_quantile,
    pessimistic_select,
)

__version__ = "0.1.0"

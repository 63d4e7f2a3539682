"""Experiment configuration, Monte Carlo runner, metrics and reports."""
from .config import ExperimentConfig
from .experiments import (
    RunResult,
    corollary1_experiment,
    coverage_experiment,
    run_benchmark,
    run_replication,
    run_replications,
    summarize,
    sweep,
)
from .metrics import compute_regret, topk_metrics
from .report import emit_report, load_report

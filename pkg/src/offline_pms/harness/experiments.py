"""Monte Carlo replication runner and the experiment drivers built on it."""
from __future__ import annotations

import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..envs import collect_trajectories
from ..learners import fqi_fit, greedy_policy
from ..mdp import policy_value_exact
from ..ope import fit_ratio, marginal_is_value, naive_greedy_score, wis_value
from ..selection import pessimistic_select, z_upper
from .config import WORKERS_ENV, ExperimentConfig
from .metrics import compute_regret, ranking_from_scores, topk_metrics

log = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def _env_cached(env_json: str):
    return ExperimentConfig(json.loads(env_json)).build_env()


def _env(config: ExperimentConfig):
    # only the sections that shape the environment and data distribution
    key = {k: config.raw[k] for k in ("env", "behavior", "data")}
    return _env_cached(json.dumps(key, sort_keys=True))


def make_dataset(config: ExperimentConfig, rep: int):
    mdp, behavior, start = _env(config)
    d = config.raw["data"]
    return collect_trajectories(
        mdp,
        behavior,
        int(d["n_episodes"]),
        int(d["horizon"]),
        seed=config.replication_seed(rep),
        reward_noise=float(d["reward_noise"]),
        start_dist=start,
        meta={"replication": rep, "behavior": f"{config.raw['behavior']}"},
    )


def _ratio_scores(batch, policies, nu, gamma, sel, estimator):
    scores = []
    for pi in policies:
        omega = fit_ratio(batch, pi, nu, sel.ratio_features, gamma, sel.lambda_omega, sel.clip_bounds)
        scores.append(estimator(omega, batch))
    return scores


def run_replication(config: ExperimentConfig, rep: int) -> dict:
    """One replication: fresh dataset, every selector, every metric.

    All selectors see the same dataset and the same candidate fits.
    """
    mdp, _, _ = _env(config)
    S, A = mdp.n_states, mdp.n_actions
    nu = mdp.init_dist
    ds = make_dataset(config, rep)
    cands = config.candidates()
    sel = config.selection_config()
    L = len(cands)

    report = pessimistic_select(ds, cands, sel, nu, A)
    full = ds.batch()
    stats = full.stats(S, A)
    qs = [fqi_fit(stats, c, S, A) for c in cands]
    policies = [greedy_policy(q) for q in qs]
    true_values = [policy_value_exact(mdp, pi) for pi in policies]

    scores, chosen = {}, {}
    for name in config.selectors:
        if name == "pms":
            scores[name] = report.lower.tolist()
            chosen[name] = report.pms
        elif name == "lepski":
            chosen[name] = report.lepski
        elif name == "combined":
            chosen[name] = report.combined
        elif name == "naive":
            scores[name] = [naive_greedy_score(q, pi, nu) for q, pi in zip(qs, policies)]
        elif name in ("is", "wis"):
            est = marginal_is_value if name == "is" else wis_value
            scores[name] = _ratio_scores(full, policies, nu, mdp.gamma, sel, est)
        if name not in chosen:
            chosen[name] = int(ranking_from_scores(scores[name])[0])

    regret = {k: compute_regret(true_values, i) for k, i in chosen.items()}
    topk = {}
    for name, sc in scores.items():
        ranking = ranking_from_scores(sc)
        topk[name] = {
            str(k): topk_metrics(true_values, ranking[:k], k)
            for k in config.raw["topk"]
            if k <= L
        }

    tv = np.asarray(true_values)
    n_top = max(1, math.ceil(float(config.raw["top_fraction"]) * L))
    z = z_upper(sel.alpha / 2)
    covered = np.abs(report.values - tv) <= z * report.se
    event = tv[report.pms] >= np.max(tv - 2.0 * z * report.se)
    return {
        "replication": rep,
        "seed": config.replication_seed(rep),
        "candidate_ids": [c.id for c in cands],
        "true_values": [float(v) for v in true_values],
        "estimates": report.values.tolist(),
        "sigmas": report.sigmas.tolist(),
        "se": report.se.tolist(),
        "lower": report.lower.tolist(),
        "lepski_prefix": report.lepski_prefix,
        "scores": scores,
        "chosen": chosen,
        "regret": regret,
        "topk": topk,
        "top_fraction_regrets": [compute_regret(tv, int(i)) for i in report.top_by_lower(n_top)],
        "candidate_regrets": [float(tv.max() - v) for v in tv],
        "coverage": [bool(c) for c in covered],
        "corollary1_event": bool(event),
        "n_clamped": int(sum(c.clamped for e in report.evaluations for c in e.chunk_evals)),
    }


def _run_one(args):
    config, rep = args
    start = time.perf_counter()
    try:
        record = run_replication(config, rep)
    except Exception as exc:  # quarantined per replication, reported in the output
        log.warning("replication %d failed: %r", rep, exc)
        record = {
            "replication": rep,
            "seed": config.replication_seed(rep),
            "error": repr(exc),
            "traceback": traceback.format_exc(),
        }
    return record, time.perf_counter() - start


def _workers(workers) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


@dataclass
class RunResult:
    records: list
    timings: list = field(default_factory=list)

    @property
    def ok(self) -> list:
        return [r for r in self.records if "error" not in r]

    @property
    def errors(self) -> list:
        return [r for r in self.records if "error" in r]


def run_replications(config: ExperimentConfig, n: int | None = None, workers=None) -> RunResult:
    """Run replications ``0 .. n-1``; results come back in replication order."""
    n = config.replications if n is None else n
    jobs = [(config, rep) for rep in range(n)]
    workers = _workers(workers)
    if workers == 1:
        out = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_one, jobs))
    return RunResult([r for r, _ in out], [t for _, t in out])


def _quantiles(x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {}
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "mean": float(x.mean()),
        "se": float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0,
        "min": float(q[0]),
        "q25": float(q[1]),
        "median": float(q[2]),
        "q75": float(q[3]),
        "max": float(q[4]),
        "n": int(x.size),
    }


def summarize(records: list) -> dict:
    ok = [r for r in records if "error" not in r]
    summary = {"n_replications": len(records), "n_errors": len(records) - len(ok)}
    if not ok:
        return summary
    selectors = list(ok[0]["regret"])
    summary["regret"] = {s: _quantiles([r["regret"][s] for r in ok]) for s in selectors}
    summary["all_candidates_regret"] = _quantiles([v for r in ok for v in r["candidate_regrets"]])
    summary["top_fraction_regret"] = _quantiles([v for r in ok for v in r["top_fraction_regrets"]])
    summary["coverage"] = np.mean([r["coverage"] for r in ok], axis=0).tolist()
    summary["corollary1_frequency"] = float(np.mean([r["corollary1_event"] for r in ok]))
    topk = {}
    for s in ok[0]["topk"]:
        topk[s] = {
            k: {
                m: float(np.mean([r["topk"][s][k][m] for r in ok]))
                for m in ("topk_regret", "topk_precision")
            }
            for k in ok[0]["topk"][s]
        }
    summary["topk"] = topk
    return summary


def run_benchmark(config: ExperimentConfig, workers=None) -> tuple:
    """All replications plus the aggregate summary."""
    result = run_replications(config, workers=workers)
    return result, summarize(result.records)


def coverage_experiment(config: ExperimentConfig, workers=None) -> dict:
    """Empirical rate at which ``value +- z_{alpha/2} se`` covers each candidate's true value."""
    cfg = config.with_overrides(selectors=["pms"])
    result = run_replications(cfg, workers=workers)
    ok = result.ok
    if not ok:
        raise RuntimeError(f"all {len(result.records)} replications failed")
    return {
        "rates": np.mean([r["coverage"] for r in ok], axis=0).tolist(),
        "n": len(ok),
        "n_errors": len(result.errors),
    }


def corollary1_experiment(config: ExperimentConfig, workers=None) -> dict:
    """Frequency of ``V(chosen) >= max_l [V(l) - 2 z_{alpha/2} se(l)]`` over replications."""
    cfg = config.with_overrides(selectors=["pms"])
    result = run_replications(cfg, workers=workers)
    ok = result.ok
    if not ok:
        raise RuntimeError(f"all {len(result.records)} replications failed")
    return {
        "frequency": float(np.mean([r["corollary1_event"] for r in ok])),
        "n": len(ok),
        "n_errors": len(result.errors),
    }


def _override(path: str, value) -> dict:
    section, _, key = path.partition(".")
    return {section: {key: value}} if key else {section: value}


def sweep(config: ExperimentConfig, param: str, values, workers=None) -> list:
    """Rerun the benchmark for each value of a dotted parameter such as ``data.n_episodes``."""
    rows = []
    for v in values:
        cfg = config.with_overrides(**_override(param, v))
        result, summary = run_benchmark(cfg, workers=workers)
        rows.append({"param": param, "value": v, "summary": summary, "records": result.records})
    return rows

"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict; the lines are printed together at the
end of the pytest run (see ``conftest.pytest_terminal_summary``). Running this
file directly prints them as each criterion finishes.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from offline_pms import (
    ChainSpec,
    FeatureSpec,
    GridworldSpec,
    Policy,
    build_chain,
    build_gridworld,
    collect_trajectories,
    dr_value_chunk,
    dr_variance_chunk,
    fit_ratio,
    partition_dataset,
    policy_value_exact,
    q_value_exact,
    stationary_distribution,
    visitation_ratio_exact,
)
from offline_pms.envs import FROZEN_LAKE_4X4
from offline_pms.harness import ExperimentConfig, corollary1_experiment, coverage_experiment, run_benchmark, sweep

VERDICTS = []


def verdict(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}"
    VERDICTS.append(line)
    if __name__ == "__main__":
        print(line, flush=True)
    assert ok, line


def slippery(gamma=0.9, slip=0.2):
    spec = GridworldSpec.from_layout(FROZEN_LAKE_4X4, slip_prob=slip, absorbing=False)
    return build_gridworld(spec, gamma, "uniform")


def test_1_ratio_oracle_equivalence():
    t0 = time.perf_counter()
    mdp = build_chain(ChainSpec(5, 0.8), 0.9)
    b = Policy.uniform(5, 2)
    pi = Policy(np.tile([0.3, 0.7], (5, 1)))
    start = stationary_distribution(mdp, b).sum(axis=1)
    n, T = 1000, 100
    ds = collect_trajectories(mdp, b, n, T, seed=101, start_dist=start)
    omega = fit_ratio(ds.batch(), pi, mdp.init_dist, FeatureSpec("tabular"), mdp.gamma)
    exact = visitation_ratio_exact(mdp, pi, b, T, data_start=start)
    visited = ds.batch().stats(5, 2).counts > 0
    err = float(np.abs(omega.table - exact.omega)[visited].max())
    elapsed = time.perf_counter() - t0
    verdict(1, "ratio oracle", err <= 0.1 and elapsed < 10, f"sup-norm {err:.4f} <= 0.1, {elapsed:.2f}s < 10s")


def test_2_dr_exactness():
    mdp = build_gridworld(GridworldSpec.from_layout(FROZEN_LAKE_4X4), 0.9, "uniform")
    rng = np.random.default_rng(202)
    pi = Policy(rng.dirichlet(np.ones(4), size=16))
    ds = collect_trajectories(mdp, Policy.uniform(16, 4), 50, 100, seed=202)
    q = q_value_exact(mdp, pi)
    truth = policy_value_exact(mdp, pi)
    part = partition_dataset(ds, 20)
    # any bounded ratio works with the exact Q; use a fitted one
    omega = fit_ratio(ds.batch(), pi, mdp.init_dist, FeatureSpec("tabular"), mdp.gamma)
    errs = [abs(dr_value_chunk(q, pi, omega, ds.batch(c), mdp.init_dist, mdp.gamma) - truth) for c in part.chunks]
    worst = max(errs)
    verdict(2, "DR exactness", worst <= 1e-10, f"max |V_hat - V| over {len(errs)} chunks = {worst:.2e} <= 1e-10")


def test_3_dr_unbiasedness():
    mdp = slippery()
    b = make_soft(mdp, 0.5)
    pi = make_soft(mdp, 0.1)
    start = stationary_distribution(mdp, b).sum(axis=1)
    n_chunks, per_chunk, T = 500, 20, 10
    ds = collect_trajectories(mdp, b, n_chunks * per_chunk, T, seed=303, start_dist=start)
    q = q_value_exact(mdp, pi)
    omega = visitation_ratio_exact(mdp, pi, b, T, data_start=start).omega
    ep = np.arange(ds.n_episodes).reshape(n_chunks, per_chunk)
    values, sig2 = [], []
    for group in ep:
        idx = np.array([(i, t) for i in group for t in range(T)])
        chunk = ds.batch(idx)
        values.append(dr_value_chunk(q, pi, omega, chunk, mdp.init_dist, mdp.gamma))
        sig2.append(dr_variance_chunk(q, pi, omega, chunk, mdp.gamma).sigma2)
    se = np.sqrt(np.mean(sig2)) / np.sqrt(n_chunks * per_chunk * T)
    gap = abs(np.mean(values) - policy_value_exact(mdp, pi))
    verdict(3, "DR unbiasedness", gap <= 3 * se, f"|mean - V| = {gap:.2e} <= 3 SE = {3 * se:.2e}")


def make_soft(mdp, eps):
    from offline_pms.mdp import optimal_q_value

    greedy = optimal_q_value(mdp).argmax(axis=1)
    return Policy((1 - eps) * np.eye(mdp.n_actions)[greedy] + eps / mdp.n_actions)


ACCEPT = {"env": {"slip_prob": 0.2, "gamma": 0.9}, "behavior": {"epsilon": 0.5}, "seed": 2024}


def test_4_ci_coverage():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        {
            **ACCEPT,
            "data": {"n_episodes": 500},
            "candidates": {"features": [{"kind": "tabular"}], "iterations": [100], "ridge": [1e-4]},
            "selection": {"alpha": 0.05},
            "replications": 200,
        }
    )
    out = coverage_experiment(cfg)
    rate = out["rates"][0]
    elapsed = time.perf_counter() - t0
    ok = 0.90 <= rate <= 0.99 and elapsed < 300 and out["n_errors"] == 0
    verdict(4, "CI coverage", ok, f"rate {rate:.3f} in [0.90, 0.99] over R={out['n']}, {elapsed:.0f}s < 300s")


def test_5_corollary1_event():
    cfg = ExperimentConfig(
        {
            **ACCEPT,
            "candidates": {"features": [{"kind": "tabular"}], "iterations": [1, 2, 5, 20, 100], "ridge": [1e-4]},
            "selection": {"alpha": 0.01},
            "replications": 200,
        }
    )
    out = corollary1_experiment(cfg)
    f = out["frequency"]
    verdict(5, "selection-guarantee event", f >= 0.90 and out["n_errors"] == 0, f"frequency {f:.3f} >= 0.90 over R={out['n']}, L=5")


@pytest.fixture(scope="module")
def benchmark():
    cfg = ExperimentConfig({**ACCEPT, "replications": 100, "selectors": ["pms", "lepski", "combined", "naive"]})
    assert len(cfg.candidates()) == 16
    return run_benchmark(cfg)


def test_6_selection_quality(benchmark):
    res, s = benchmark
    pms, naive = s["regret"]["pms"]["mean"], s["regret"]["naive"]["mean"]
    top, overall = s["top_fraction_regret"]["median"], s["all_candidates_regret"]["median"]
    ok = pms <= naive and top <= overall and not res.errors
    verdict(
        6, "selection quality", ok,
        f"mean regret PMS {pms:.4f} <= naive {naive:.4f}; top-10% median {top:.4f} <= overall median {overall:.4f}",
    )


def test_7_sensitivity():
    cfg = ExperimentConfig({**ACCEPT, "replications": 100, "selectors": ["pms"]})
    rows = sweep(cfg, "data.n_episodes", [50, 100, 500, 1000])
    means = [r["summary"]["regret"]["pms"]["mean"] for r in rows]
    ses = [r["summary"]["regret"]["pms"]["se"] for r in rows]
    ok = all(m1 <= m0 + max(s0, s1) for m0, m1, s0, s1 in zip(means, means[1:], ses, ses[1:]))
    detail = ", ".join(f"n={r['value']}: {m:.4f}+-{s:.4f}" for r, m, s in zip(rows, means, ses))
    verdict(7, "data-size sensitivity", ok, f"PMS mean regret non-increasing up to 1 SE ({detail})")


def test_8_refinement_consistency(benchmark):
    _, s = benchmark
    med = {k: s["regret"][k]["median"] for k in ("pms", "lepski", "combined")}
    ok = all(med[k] <= 1.2 * med["pms"] for k in ("lepski", "combined"))
    verdict(
        8, "refinement consistency", ok,
        f"median regret lepski {med['lepski']:.4f}, combined {med['combined']:.4f} <= 1.2 x PMS {med['pms']:.4f}",
    )


def test_9_invariant_suites():
    here = Path(__file__).parent
    files = sorted(str(p) for p in here.glob("test_*.py") if p.name != Path(__file__).name)
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
        capture_output=True, text=True, cwd=here.parent,
    )
    elapsed = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(9, "unit invariants", proc.returncode == 0 and elapsed < 120, f"{tail}; {elapsed:.1f}s < 120s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

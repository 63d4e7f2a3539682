"""Doubly robust estimates from logged data against the exact value.

Fits a Q model and a ratio model on the first half of a dataset and scores
the greedy policy on each later chunk; the per-chunk estimates are pooled
with inverse-sigma weights.
"""
import numpy as np

from offline_pms import FeatureSpec, fit_ratio, fqi_fit, greedy_policy, partition_dataset, policy_value_exact
from offline_pms.harness import ExperimentConfig
from offline_pms.harness.experiments import make_dataset
from offline_pms.ope import aggregate_sigma, aggregate_value, evaluate_chunk

cfg = ExperimentConfig({"data": {"n_episodes": 300}})
mdp, _, _ = cfg.build_env()
ds = make_dataset(cfg, rep=0)
part = partition_dataset(ds, 10)
train = np.concatenate(part.chunks[:5])

cand = next(c for c in cfg.candidates() if c.id == "tab-K100-lam0.0001")
stats = ds.batch(train).stats(16, 4)
q = fqi_fit(stats, cand, 16, 4)
pi = greedy_policy(q)
omega = fit_ratio(stats, pi, mdp.init_dist, FeatureSpec("tabular"), mdp.gamma)

evals = [evaluate_chunk(o, q, pi, omega, ds.batch(part.chunks[o]), mdp.init_dist, mdp.gamma) for o in range(5, 10)]
for e in evals:
    print(f"chunk {e.o + 1:2d}: V_hat={e.value:.4f}  sigma={e.sigma:.4f}")
print(f"pooled: {aggregate_value(evals):.4f} (sigma {aggregate_sigma(evals):.4f})")
print(f"exact : {policy_value_exact(mdp, pi):.4f}")

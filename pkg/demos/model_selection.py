"""Choosing among 16 fitted models from one logged dataset.

Prints each candidate's pooled estimate, its lower confidence limit and its
exact value, then the picks of the pessimistic rule, its two Lepski-style
refinements and the naive plug-in score.
"""
import numpy as np

from offline_pms import fqi_fit, greedy_policy, naive_greedy_score, pessimistic_select, policy_value_exact
from offline_pms.harness import ExperimentConfig
from offline_pms.harness.experiments import make_dataset

cfg = ExperimentConfig({"seed": 7})
mdp, _, _ = cfg.build_env()
ds = make_dataset(cfg, rep=0)
cands = cfg.candidates()
report = pessimistic_select(ds, cands, cfg.selection_config(), mdp.init_dist, 4)

stats = ds.batch().stats(16, 4)
qs = [fqi_fit(stats, c, 16, 4) for c in cands]
truth = np.array([policy_value_exact(mdp, greedy_policy(q)) for q in qs])
naive = [naive_greedy_score(q, greedy_policy(q), mdp.init_dist) for q in qs]

print(f"{'candidate':<20}{'V_hat':>9}{'lower':>9}{'naive':>9}{'true':>9}")
for i, c in enumerate(cands):
    print(f"{c.id:<20}{report.values[i]:9.4f}{report.lower[i]:9.4f}{naive[i]:9.4f}{truth[i]:9.4f}")

picks = {**report.chosen, "naive": int(np.argmax(naive))}
for name, i in picks.items():
    print(f"{name:>9}: {cands[i].id:<20} regret {truth.max() - truth[i]:.4f}")

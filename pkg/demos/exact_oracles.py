"""Exact values on the slippery 4x4 lake.

Solves for the optimal policy, evaluates an epsilon-soft version of it, and
shows how far the soft policy's discounted visitation drifts from the
behavior occupancy that logged data would follow.
"""
import numpy as np

from offline_pms import GridworldSpec, Policy, build_gridworld, make_behavior_policy, optimal_q_value, policy_value_exact
from offline_pms.envs import FROZEN_LAKE_4X4
from offline_pms.mdp import stationary_distribution, visitation_ratio_exact

mdp = build_gridworld(GridworldSpec.from_layout(FROZEN_LAKE_4X4, slip_prob=0.2, absorbing=False), 0.9, "uniform")
greedy = Policy.deterministic(optimal_q_value(mdp).argmax(axis=1), 4)

print("policy value by epsilon")
for eps in (0.0, 0.1, 0.5, 1.0):
    print(f"  eps={eps:.1f}  V={policy_value_exact(mdp, make_behavior_policy(greedy, eps)):.5f}")

behavior = make_behavior_policy(greedy, 0.5)
start = stationary_distribution(mdp, behavior).sum(axis=1)
ratio = visitation_ratio_exact(mdp, greedy, behavior, horizon=100, data_start=start)
w = ratio.omega[ratio.defined]
print(f"\nratio of greedy to eps=0.5 occupancy: min {w.min():.3f}, max {w.max():.3f}")
print("state occupancy under behavior (4x4):")
print(np.array2string(start.reshape(4, 4), precision=3, suppress_small=True))

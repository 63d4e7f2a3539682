import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offline_pms import (
    ChainSpec,
    FeatureSpec,
    GridworldSpec,
    Policy,
    RatioApprox,
    TabularMdp,
    aggregate_sigma,
    aggregate_value,
    build_chain,
    build_gridworld,
    collect_trajectories,
    dr_value_chunk,
    dr_variance_chunk,
    fit_ratio,
    marginal_is_value,
    naive_greedy_score,
    policy_value_exact,
    q_value_exact,
    stationary_distribution,
    visitation_ratio_exact,
    wis_value,
)
from offline_pms.dataset import Batch, TransitionStats
from offline_pms.envs import FROZEN_LAKE_4X4
from offline_pms.mdp import average_visitation
from offline_pms.ope import CandidateEvaluation, ChunkEvaluation, evaluate_chunk

from conftest import mdp_and_policy, random_policy, two_state_chain

TAB = FeatureSpec("tabular")


def batch(s, a, r, s2):
    return Batch(np.atleast_1d(s), np.atleast_1d(a), np.atleast_1d(np.asarray(r, float)), np.atleast_1d(s2))


def evals(values, sigmas):
    return [ChunkEvaluation(o, v, s) for o, (v, s) in enumerate(zip(values, sigmas), start=1)]


def population_stats(mdp, behavior, T, start, n=1.0):
    """Expected sufficient statistics of ``n`` transitions (non-integer counts)."""
    den = average_visitation(mdp, behavior, T, start)
    counts = n * den
    return TransitionStats(counts, counts * mdp.reward, counts[:, :, None] * mdp.transition)


class TestFitRatio:
    def test_one_state_is_exactly_one(self):
        b = batch([0, 0], [0, 0], [1.0, 2.0], [0, 0])
        for lam in (0.0, 1e-6):
            omega = fit_ratio(b, Policy.uniform(1, 1), np.ones(1), TAB, 0.9, lambda_omega=lam)
            # the ridge shrinks by lam / (1 - gamma)^2 relative
            assert omega.table[0, 0] == pytest.approx(1.0, abs=1e-3 if lam else 1e-14)

    @given(mdp_and_policy(max_states=4), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_population_equation_recovers_exact_ratio(self, case, seed):
        mdp, pi = case
        if mdp.gamma == 0:
            return
        b = random_policy(np.random.default_rng(seed), mdp.n_states, mdp.n_actions)
        T = 7
        stats = population_stats(mdp, b, T, mdp.init_dist)
        omega = fit_ratio(stats, pi, mdp.init_dist, TAB, mdp.gamma, lambda_omega=0.0, clip_bounds=(1e-9, 1e9))
        exact = visitation_ratio_exact(mdp, pi, b, T).omega
        np.testing.assert_allclose(omega.table, exact, rtol=1e-8, atol=1e-10)

    def test_on_policy_sample_is_near_one(self):
        base = two_state_chain(0.9)
        b = Policy(np.array([[0.6, 0.4], [0.3, 0.7]]))
        start = stationary_distribution(base, b).sum(axis=1)
        # nu = the stationary law, so the on-policy ratio is identically 1
        mdp = TabularMdp(base.transition, base.reward, base.gamma, start)
        ds = collect_trajectories(mdp, b, 100, 100, seed=0)
        omega = fit_ratio(ds.batch(), b, start, TAB, 0.9)
        visited = ds.batch().stats(2, 2).counts > 0
        assert np.abs(omega.table[visited] - 1.0).max() <= 0.1

    def test_off_policy_two_state_chain(self):
        mdp = two_state_chain(0.9)
        b = Policy.uniform(2, 2)
        pi = Policy(np.array([[0.2, 0.8], [0.7, 0.3]]))
        start = stationary_distribution(mdp, b).sum(axis=1)
        ds = collect_trajectories(mdp, b, 1000, 100, seed=1, start_dist=start)
        omega = fit_ratio(ds.batch(), pi, mdp.init_dist, TAB, 0.9)
        exact = visitation_ratio_exact(mdp, pi, b, 100, data_start=start).omega
        assert np.abs(omega.table - exact).max() <= 0.1

    def test_singular_without_ridge(self):
        b = batch([0], [0], [0.0], [0])
        with pytest.raises(np.linalg.LinAlgError, match="lambda_omega"):
            fit_ratio(b, Policy.uniform(2, 2), np.array([0.5, 0.5]), TAB, 0.9, lambda_omega=0.0)

    def test_unobserved_features_get_zero_weight(self):
        b = batch([0, 0], [0, 0], [0.0, 0.0], [0, 0])
        omega = fit_ratio(b, Policy.uniform(2, 2), np.array([0.5, 0.5]), TAB, 0.9)
        assert np.all(omega.weights.reshape(2, 2)[1] == 0)
        assert np.all(omega.table >= 1e-3)

    def test_empty(self):
        e = Batch(np.array([], int), np.array([], int), np.array([]), np.array([], int))
        with pytest.raises(ValueError):
            fit_ratio(e, Policy.uniform(1, 1), np.ones(1), TAB, 0.9)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), st.floats(1e-4, 1.0), st.floats(1.0, 1e4))
    def test_evaluate_is_clipped(self, w, lo, hi):
        omega = RatioApprox(np.array(w), TAB.build(2, 2), (lo, hi))
        out = omega.evaluate(np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]))
        assert np.all((out >= lo) & (out <= hi))
        assert np.all((omega.table >= lo) & (omega.table <= hi))

    def test_bad_clip_bounds(self):
        with pytest.raises(ValueError):
            RatioApprox(np.ones(1), TAB.build(1, 1), (0.0, 1.0))


class TestDrValue:
    def test_plug_in_collapse(self):
        ch = batch([0, 1, 1], [0, 0, 1], [1.0, 2.0, 6.0], [1, 0, 0])
        v = dr_value_chunk(np.zeros((2, 2)), Policy.uniform(2, 2), np.ones((2, 2)), ch, np.array([0.5, 0.5]), 0.0)
        assert v == pytest.approx(3.0)

    def test_single_transition_hand_value(self):
        ch = batch(0, 0, 1.0, 0)
        q, omega, pi, nu = np.ones((1, 1)), np.full((1, 1), 2.0), Policy.uniform(1, 1), np.ones(1)
        assert dr_value_chunk(q, pi, omega, ch, nu, 0.5) == pytest.approx(1.5, abs=1e-15)
        var = dr_variance_chunk(q, pi, omega, ch, 0.5)
        assert var.sigma2 == pytest.approx(1.0, abs=1e-15)
        assert not var.clamped

    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    @settings(max_examples=30, deadline=None)
    def test_exact_q_on_deterministic_mdp(self, seed, scale):
        mdp = build_gridworld(GridworldSpec.from_layout(FROZEN_LAKE_4X4), 0.9, "uniform")
        rng = np.random.default_rng(seed)
        pi = random_policy(rng, 16, 4)
        ds = collect_trajectories(mdp, Policy.uniform(16, 4), 3, 10, seed=seed)
        omega = scale * rng.random((16, 4))
        v = dr_value_chunk(q_value_exact(mdp, pi), pi, omega, ds.batch(), mdp.init_dist, mdp.gamma)
        assert v == pytest.approx(policy_value_exact(mdp, pi), abs=1e-10)

    def test_zero_residual_is_clamped(self):
        mdp = build_gridworld(GridworldSpec.from_layout(FROZEN_LAKE_4X4), 0.9)
        pi = Policy.uniform(16, 4)
        ds = collect_trajectories(mdp, pi, 2, 5, seed=0)
        var = dr_variance_chunk(q_value_exact(mdp, pi), pi, np.ones((16, 4)), ds.batch(), 0.9)
        assert var.sigma == 1e-6 and var.clamped
        assert var.sigma2 < 1e-20

    def test_variance_plug_in(self):
        ch = batch([0, 0], [0, 0], [1.0, 3.0], [0, 0])
        var = dr_variance_chunk(np.zeros((1, 1)), Policy.uniform(1, 1), np.ones((1, 1)), ch, 0.0)
        assert var.sigma2 == pytest.approx(5.0)

    def test_empty_chunk(self):
        e = Batch(np.array([], int), np.array([], int), np.array([]), np.array([], int))
        with pytest.raises(ValueError):
            dr_value_chunk(np.zeros((1, 1)), Policy.uniform(1, 1), np.ones((1, 1)), e, np.ones(1), 0.5)

    def test_exact_ratio_with_zero_q(self):
        # only the ratio is right: the mean should still center on the true value
        mdp = build_chain(ChainSpec(5, 0.8), 0.9, init_dist=np.full(5, 0.2))
        b = Policy.uniform(5, 2)
        pi = Policy(np.tile([0.2, 0.8], (5, 1)))
        start = stationary_distribution(mdp, b).sum(axis=1)
        omega = visitation_ratio_exact(mdp, pi, b, 50, data_start=start).omega
        ds = collect_trajectories(mdp, b, 400, 50, seed=2, start_dist=start)
        full = ds.batch()
        q0 = np.zeros((5, 2))
        v = dr_value_chunk(q0, pi, omega, full, mdp.init_dist, 0.9)
        per_ep = (omega[ds.states, ds.actions] * ds.rewards).mean(axis=1)
        se = per_ep.std(ddof=1) / np.sqrt(ds.n_episodes)
        assert abs(v - policy_value_exact(mdp, pi)) < 3 * se

    def test_evaluate_chunk_matches_parts(self):
        mdp = two_state_chain()
        pi = Policy.uniform(2, 2)
        ds = collect_trajectories(mdp, pi, 4, 6, seed=0)
        q, omega = np.random.default_rng(0).random((2, 2)), np.full((2, 2), 1.5)
        ce = evaluate_chunk(3, q, pi, omega, ds.batch(), mdp.init_dist, 0.9)
        assert ce.value == dr_value_chunk(q, pi, omega, ds.batch(), mdp.init_dist, 0.9)
        assert ce.sigma == dr_variance_chunk(q, pi, omega, ds.batch(), 0.9).sigma
        assert ce.o == 3


class TestAggregate:
    def test_examples(self):
        assert aggregate_value(evals([0, 4], [1, 3])) == pytest.approx(1.0)
        assert aggregate_value(evals([1, 2, 6], [2, 2, 2])) == pytest.approx(3.0)
        assert aggregate_value(evals([0.7], [0.1])) == 0.7
        assert aggregate_sigma(evals([0, 0], [1, 1])) == pytest.approx(1.0)
        assert aggregate_sigma(evals([0, 0], [1, 3])) == pytest.approx(1.5)
        assert aggregate_sigma(evals([0], [0.3])) == pytest.approx(0.3)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            ChunkEvaluation(1, 0.0, 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_value([])

    @given(
        st.lists(
            st.tuples(st.floats(-1e3, 1e3), st.floats(1e-6, 1e3)), min_size=1, max_size=25
        )
    )
    def test_convex_combination_and_sigma_bounds(self, pairs):
        values, sigmas = zip(*pairs)
        ev = evals(values, sigmas)
        v, s = aggregate_value(ev), aggregate_sigma(ev)
        tol = 1e-9 * max(1.0, max(map(abs, values)))
        assert min(values) - tol <= v <= max(values) + tol
        assert min(sigmas) * (1 - 1e-12) <= s <= max(sigmas) * (1 + 1e-12)

    def test_candidate_evaluation_round_trip(self):
        ce = CandidateEvaluation("c1", evals([0.1, 0.2, 0.4], [1.0, 2.0, 0.5]))
        d = json.loads(json.dumps(ce.to_dict()))
        back = CandidateEvaluation.from_dict(d)
        assert back.value_agg == ce.value_agg and back.sigma_agg == ce.sigma_agg
        assert d["chunks"][0] == {"o": 1, "value": 0.1, "sigma": 1.0, "clamped": False}


class TestBaselines:
    def test_naive(self):
        nu = np.array([0.5, 0.5])
        assert naive_greedy_score(np.full((2, 3), 1.7), Policy.uniform(2, 3), nu) == pytest.approx(1.7)
        pi = Policy.deterministic([1, 0], 2)
        q = np.array([[9.0, 1.0], [3.0, 9.0]])
        assert naive_greedy_score(q, pi, nu) == pytest.approx(2.0)

    def test_is_with_unit_ratio_is_mean_reward(self):
        ch = batch([0, 1, 1], [0, 1, 0], [1.0, 2.0, 6.0], [1, 1, 0])
        assert marginal_is_value(np.ones((2, 2)), ch) == pytest.approx(3.0)
        assert marginal_is_value(np.ones((1, 1)), batch([0, 0], [0, 0], [0.4, 0.4], [0, 0])) == pytest.approx(0.4)

    def test_wis_single_transition(self):
        assert wis_value(np.full((1, 1), 7.0), batch(0, 0, 0.25, 0)) == 0.25

    @given(st.floats(1e-3, 1e3), st.integers(0, 1000))
    def test_wis_scale_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        ch = batch(rng.integers(0, 3, 20), rng.integers(0, 2, 20), rng.normal(size=20), rng.integers(0, 3, 20))
        omega = rng.random((3, 2)) + 0.1
        assert wis_value(c * omega, ch) == pytest.approx(wis_value(omega, ch), rel=1e-12)
        assert wis_value(np.full((3, 2), c), ch) == pytest.approx(ch.rewards.mean(), rel=1e-12, abs=1e-15)

    def test_empty(self):
        e = Batch(np.array([], int), np.array([], int), np.array([]), np.array([], int))
        with pytest.raises(ValueError):
            marginal_is_value(np.ones((1, 1)), e)
        with pytest.raises(ValueError):
            wis_value(np.ones((1, 1)), e)

    @pytest.mark.parametrize("estimator", [marginal_is_value, wis_value])
    def test_off_policy_chain_with_exact_ratio(self, estimator):
        mdp = build_chain(ChainSpec(5, 0.8), 0.9, init_dist=np.full(5, 0.2))
        b = Policy.uniform(5, 2)
        pi = Policy(np.tile([0.3, 0.7], (5, 1)))
        start = stationary_distribution(mdp, b).sum(axis=1)
        T = 100
        omega = visitation_ratio_exact(mdp, pi, b, T, data_start=start).omega
        ds = collect_trajectories(mdp, b, 1000, T, seed=3, start_dist=start)
        # per-episode terms are independent; their spread gives the standard error
        w = omega[ds.states, ds.actions]
        per_ep = (w * ds.rewards).mean(axis=1)
        se = per_ep.std(ddof=1) / np.sqrt(ds.n_episodes)
        if estimator is wis_value:
            se = np.std(per_ep / w.mean(axis=1), ddof=1) / np.sqrt(ds.n_episodes)
        assert abs(estimator(omega, ds) - policy_value_exact(mdp, pi)) < 3 * se

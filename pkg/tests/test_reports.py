import numpy as np
import pytest

from survival_rl.mdp import Outcome, Policy, TrajectoryDataset
from survival_rl.reports import (action_distribution_report, actions_csv, max_min_scale,
                                 stratified_q_report, strata_csv, vasopressor_csv)
from survival_rl.solvers import greedy_policy, survival_value_iteration


def test_scaling_endpoints(rng):
    x = rng.normal(size=50)
    y, lo, hi = max_min_scale(x)
    assert y.min() == 0.0 and y.max() == 1.0
    assert (lo, hi) == (x.min(), x.max())


class TestStrata:
    def test_constant_model(self, bench):
        rep = stratified_q_report(np.full((10, 9), 0.3), bench["dataset"])
        for summ in rep["strata"].values():
            assert summ["min"] == summ["max"] == 0.0
        assert rep["strata"]["release"]["median"] - rep["strata"]["death"]["median"] == 0.0

    def test_exact_q_separation(self, bench):
        rep = stratified_q_report(survival_value_iteration(bench["mdp"]).q, bench["dataset"])
        s = rep["strata"]
        assert s["death_last_24"]["median"] < s["release"]["median"]
        assert s["death_last_24"]["median"] < s["release_last_24"]["median"]

    def test_absent_stratum(self, bench):
        ds = bench["dataset"]
        released = [ep for ep in ds.episodes[:300] if ep.outcome is Outcome.RELEASED]
        sub = TrajectoryDataset(released, ds.n_states, ds.n_actions)
        rep = stratified_q_report(survival_value_iteration(bench["mdp"]).q, sub, last_k=2)
        assert rep["strata"]["death"] == {"n": 0, "absent": True}
        assert rep["strata"]["death_last_2"]["absent"]
        assert rep["strata"]["release_last_2"]["n"] <= rep["strata"]["release"]["n"]
        csv = strata_csv(rep).splitlines()
        assert csv[0] == "stratum,statistic,value"
        assert "death,n,0" in csv

    def test_fitted_model_in_range(self, bench, bench_fits):
        rep = stratified_q_report(bench_fits["rl4s"], bench["dataset"])
        vals = np.concatenate([np.asarray(v) for v in rep["distributions"].values()])
        assert vals.min() >= 0.0 and vals.max() <= 1.0


class TestActions:
    def test_single_action_policy(self, bench):
        pol = Policy.from_actions([4] * 10, 9)
        rep = action_distribution_report({"fixed": pol}, bench["dataset"], include_observed=False)
        assert rep["actions"]["fixed"][4] == pytest.approx(100.0)
        assert sum(rep["actions"]["fixed"]) == pytest.approx(100.0)

    def test_behavior_matches_observed(self, bench):
        opt = greedy_policy(survival_value_iteration(bench["mdp"]).q)
        rep = action_distribution_report({"behavior": bench["behavior"], "optimal": opt},
                                         bench["dataset"])
        np.testing.assert_allclose(rep["actions"]["behavior"], rep["actions"]["observed"], atol=1.0)
        for col in rep["actions"].values():
            assert sum(col) == pytest.approx(100.0, abs=0.01)

    def test_vasopressor_buckets(self, bench):
        rep = action_distribution_report({"behavior": bench["behavior"]}, bench["dataset"])
        series = rep["vasopressor_by_steps_to_death"]["observed"]
        assert min(series) == 1
        assert all(0.0 <= v <= 100.0 for v in series.values())
        assert sum(rep["bucket_counts"].values()) == sum(
            len(ep.transitions) for ep in bench["dataset"] if ep.outcome is Outcome.DIED)
        assert vasopressor_csv(rep).startswith("policy,steps_to_death,percent_vasopressor,n_states")
        assert actions_csv(rep).count("\n") == 1 + 2 * 9

    def test_shape_mismatch(self, bench):
        with pytest.raises(ValueError):
            action_distribution_report({"x": Policy.uniform(3, 9)}, bench["dataset"])

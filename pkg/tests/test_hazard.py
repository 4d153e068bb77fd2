import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from survival_rl.hazard import (CLAMP, HazardEstimator, build_training_set, calibration_curve,
                                empirical_hazard, evaluate)
from survival_rl.mdp import Episode, Outcome, Step, TrajectoryDataset


def episode(states, outcome, terminal_state=None):
    steps = [Step(s, 0, s2, t) for t, (s, s2) in enumerate(zip(states, states[1:]))]
    if outcome is not Outcome.TRUNCATED:
        steps.append(Step(states[-1], 0, states[-1], len(steps)))
        return Episode(tuple(steps), outcome, len(states) - 1)
    return Episode(tuple(steps), outcome, len(steps))


class TestTrainingSet:
    def test_death_labels(self):
        ds = TrajectoryDataset([episode([0, 1, 0, 4], Outcome.DIED)], 5, 1)
        X, y = build_training_set(ds)
        assert y.tolist() == [0, 0, 1]
        assert X[:, 0].tolist() == [0, 1, 0]

    def test_release_and_truncated_all_zero(self):
        ds = TrajectoryDataset([episode([0, 1, 3], Outcome.RELEASED),
                                episode([0, 1, 2], Outcome.TRUNCATED)], 5, 1)
        _, y = build_training_set(ds)
        assert y.tolist() == [0, 0, 0, 0]

    def test_empty(self):
        with pytest.raises(ValueError):
            build_training_set(TrajectoryDataset([], 3, 1))

    def test_benchmark_positive_fraction(self, bench):
        X, y = build_training_set(bench["dataset"])
        mean_h = bench["mdp"].hazard[X[:, 0], X[:, 1]].mean()
        assert abs(y.mean() - mean_h) <= 0.2 * mean_h


def random_examples(rng, S=4, A=3, n=3000):
    X = np.column_stack([rng.integers(S, size=n), rng.integers(A, size=n)])
    p = rng.uniform(0.05, 0.6, size=(S, A))
    y = (rng.random(n) < p[X[:, 0], X[:, 1]]).astype(int)
    y[:2] = [0, 1]
    return X, y


class TestFit:
    @given(seed=st.integers(0, 2**31 - 1), weight=st.sampled_from([1.0, 3.0, 10.0]))
    def test_tabular_matches_closed_form(self, seed, weight):
        X, y = random_examples(np.random.default_rng(seed))
        model = HazardEstimator(4, 3, positive_weight=weight).fit(X, y)
        oracle, counts = empirical_hazard(X, y, 4, 3, weight)
        seen = counts > 0
        np.testing.assert_allclose(model.hazard_table()[seen], oracle[seen], atol=1e-6)

    def test_rebalance_keeps_ordering(self, rng):
        X, y = random_examples(rng)
        h1 = HazardEstimator(4, 3, positive_weight=1.0).fit(X, y).hazard_table().ravel()
        h10 = HazardEstimator(4, 3, positive_weight=10.0).fit(X, y).hazard_table().ravel()
        np.testing.assert_array_equal(np.argsort(h1, kind="stable"), np.argsort(h10, kind="stable"))
        assert np.all(h10 > h1)

    def test_one_class_rejected(self):
        X = np.array([[0, 0], [1, 0]])
        with pytest.raises(ValueError):
            HazardEstimator(2, 1).fit(X, [0, 0])

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            HazardEstimator().fit(np.zeros((4, 3), dtype=int), [0, 1, 0, 1])

    def test_predictions_strictly_inside(self, rng):
        X, y = random_examples(rng)
        y[X[:, 0] == 0] = 0
        p = HazardEstimator(4, 3).fit(X, y).predict_proba(X)
        assert np.all((p > 0) & (p < 1))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_onehot_and_momentum(self, rng):
        X, y = random_examples(rng)
        newton = HazardEstimator(4, 3, feature_mode="onehot").fit(X, y)
        gd = HazardEstimator(4, 3, feature_mode="onehot", solver="momentum", lr=0.5,
                             n_iters=5000).fit(X, y)
        np.testing.assert_allclose(gd.hazard_table(), newton.hazard_table(), atol=1e-3)
        assert gd.final_loss_ >= newton.final_loss_ - 1e-9

    def test_deterministic(self, rng):
        X, y = random_examples(rng)
        a = HazardEstimator(4, 3, feature_mode="onehot").fit(X, y).coef_
        b = HazardEstimator(4, 3, feature_mode="onehot").fit(X, y).coef_
        np.testing.assert_array_equal(a, b)

    def test_estimator_api(self, rng, tmp_path):
        X, y = random_examples(rng)
        est = HazardEstimator(4, 3, positive_weight=2.0)
        assert clone(est).get_params() == est.get_params()
        with pytest.raises(NotFittedError):
            est.predict(X)
        est.fit(X, y)
        assert set(est.predict(X)) <= {0, 1}
        assert 0.0 <= est.score(X, y) <= 1.0
        again = HazardEstimator.from_dict(est.to_dict())
        np.testing.assert_array_equal(again.hazard_table(), est.hazard_table())

    def test_discount_table_clamped(self):
        est = HazardEstimator.from_table(np.array([[0.0, 1.0], [0.3, 0.5]]))
        d = est.discount_table()
        assert d.min() == CLAMP and d.max() == 1 - CLAMP

    def test_benchmark_accuracy(self, bench, bench_fits):
        X, _ = build_training_set(bench["dataset"])
        rep = evaluate(bench_fits["hazard"], X, None, bench["mdp"], min_visits=500)
        assert rep["n_pairs"] > 0
        assert rep["mean_abs_error"] <= 0.03


class TestEvaluate:
    def test_perfect_model(self, bench):
        m = bench["mdp"]
        rep = evaluate(HazardEstimator.from_table(m.hazard), mdp=m)
        assert rep["sup_error"] == pytest.approx(0.0, abs=1e-12)

    def test_constant_half(self, rng):
        X, y = random_examples(rng)
        rep = evaluate(HazardEstimator.from_table(np.full((4, 3), 0.5)), X, y)
        assert rep["log_loss"] == pytest.approx(math.log(2))

    def test_calibration_curve(self):
        curve = calibration_curve([0.05, 0.15, 0.12, 0.95], [0, 1, 0, 1])
        assert [c["bin"] for c in curve] == [0, 1, 9]
        assert curve[1]["count"] == 2 and curve[1]["fraction_positive"] == 0.5

    def test_benchmark_calibration(self, bench, bench_fits):
        X, y = build_training_set(bench["dataset"])
        rep = evaluate(bench_fits["hazard"], X, y)
        assert 0.8 <= rep["calibration_slope"] <= 1.2
        assert len(rep["calibration"]) <= 10

"""End-to-end acceptance checks, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints
one PASS/FAIL line per criterion.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

from helpers import chain_mdp, random_mdp
from survival_rl.batch import fit_hazard, fit_rl4s, make_training_tuples
from survival_rl.cli import main
from survival_rl.cohort import (STAGE_LEARN, behavior_policy, generate_dataset, generate_mdp,
                                stage_rng, start_distribution)
from survival_rl.hazard import build_training_set, empirical_hazard, evaluate
from survival_rl.mdp import Policy
from survival_rl.registry import benchmark_config, benchmark_names, benchmark_spec
from survival_rl.reports import stratified_q_report
from survival_rl.solvers import (apply_T, apply_T_pi, baseline_value_iteration,
                                 enumerate_optimal, exact_survival_probability, greedy_policy,
                                 survival_policy_evaluation, survival_state_values,
                                 survival_value_iteration)
from survival_rl.tabular import StepSizeSchedule, run_learner

ROOT = Path(__file__).resolve().parents[1]


@pytest.mark.criterion(1, "contraction of T and T_pi with modulus 1 - h_min")
def test_contraction(record_property):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        # hazards drawn close to h_min so the bound is nearly tight
        m = random_mdp(rng, int(rng.integers(1, 15)), int(rng.integers(1, 6)), h_min=0.05,
                       h_max=float(rng.uniform(0.05, 0.3)))
        J1 = rng.normal(scale=3, size=(m.n_states, m.n_actions))
        J2 = rng.normal(scale=3, size=J1.shape)
        pol = Policy(rng.dirichlet(np.ones(m.n_actions), size=m.n_states))
        d = np.abs(J1 - J2).max()
        for a, b in ((apply_T(m, J1), apply_T(m, J2)),
                     (apply_T_pi(m, pol, J1), apply_T_pi(m, pol, J2))):
            worst = max(worst, np.abs(a.values - b.values).max() / d)
    record_property("detail", f"max ratio {worst:.4f} <= 0.95")
    assert worst <= 0.95 + 1e-12


@pytest.mark.criterion(2, "value iteration agrees with linear-solve evaluation of its greedy policy")
def test_fixed_point(record_property):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        m = random_mdp(rng, int(rng.integers(1, 19)), int(rng.integers(1, 10)),
                       h_min=float(rng.uniform(0.02, 0.2)))
        res = survival_value_iteration(m, tol=1e-10)
        q_pi = survival_policy_evaluation(m, greedy_policy(res.q)).values
        worst = max(worst, np.abs(q_pi - res.q.values).max())
    record_property("detail", f"max sup diff {worst:.2e}")
    assert worst <= 1e-8


@pytest.mark.criterion(3, "greedy survival-VI policy is optimal by enumeration")
def test_enumeration(record_property):
    rng = np.random.default_rng(3)
    worst = -np.inf
    for _ in range(20):
        m = random_mdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)),
                       h_min=float(rng.uniform(0.02, 0.2)))
        best, _ = enumerate_optimal(m)
        v = survival_state_values(m, greedy_policy(survival_value_iteration(m).q))
        worst = max(worst, float((best - v).max()))
    record_property("detail", f"max shortfall {worst:.2e}")
    assert worst <= 1e-9


@pytest.mark.criterion(4, "tabular survival Q-learning converges on the 10-state benchmark")
def test_q_learning_convergence(record_property):
    spec = benchmark_spec("cohort-0")
    m = generate_mdp(spec)
    assert m.n_states == 10
    ref = survival_value_iteration(m).q
    finals, decreasing = [], []
    for seed in range(20):
        curve, _ = run_learner(m, Policy.uniform(m.n_states, m.n_actions), "survival-q",
                               StepSizeSchedule("harmonic", 1.0), 1_000_000,
                               stage_rng(seed, STAGE_LEARN), 10_000, reference=ref)
        finals.append(curve.sup_error[-1])
        first, last = curve.decile_means()
        decreasing.append(last < first)
    med = float(np.median(finals))
    record_property("detail", f"median sup error {med:.4f}, decreasing {sum(decreasing)}/20")
    assert med <= 0.02
    assert all(decreasing)


@pytest.mark.criterion(5, "release rows 1, death rows 0, chain value 0.72")
def test_trivial_identities(record_property):
    for m in [chain_mdp(), random_mdp(np.random.default_rng(5), 6, 3),
              generate_mdp(benchmark_spec("cohort-0"))]:
        q = survival_value_iteration(m).q.values
        assert np.all(q[m.release_flag] == 1.0)
        assert np.all(q[m.death_flag] == 0.0)
    v = survival_value_iteration(chain_mdp(), tol=1e-12).q.values[0, 0]
    record_property("detail", f"chain Q(s0) = {v:.15f}")
    assert abs(v - 0.9 * 0.8) <= 1e-12


@pytest.mark.criterion(6, "baseline Q at gamma -> 1 equals 2p - 1 on the chain")
def test_baseline_consistency(record_property):
    q = baseline_value_iteration(chain_mdp(), gamma=0.999999).q.values[0, 0]
    record_property("detail", f"baseline Q(s0) = {q:.6f}, 2*0.72-1 = 0.44")
    assert abs(q - (2 * 0.72 - 1)) <= 1e-3


@pytest.mark.criterion(7, "hazard model matches closed form and true hazards")
def test_hazard_estimation(bench, bench_fits, record_property):
    ds, m, model = bench["dataset"], bench["mdp"], bench_fits["hazard"]
    X, y = build_training_set(ds)
    oracle, counts = empirical_hazard(X, y, ds.n_states, ds.n_actions)
    seen = counts > 0
    closed = float(np.abs(model.hazard_table()[seen] - oracle[seen]).max())
    rep = evaluate(model, X, y, m, min_visits=500)
    record_property("detail", f"closed-form diff {closed:.1e}, mean |h_hat-h| "
                              f"{rep['mean_abs_error']:.4f} over {rep['n_pairs']} pairs")
    assert closed <= 1e-6
    assert rep["mean_abs_error"] <= 0.03


@pytest.mark.criterion(8, "offline RL4S: behavior - 0.01 <= RL4S <= optimal on >= 4 of 5 seeds")
def test_rl4s_headline(record_property):
    good = []
    rows = []
    for name in benchmark_names():
        spec = benchmark_spec(name)
        m = generate_mdp(spec)
        beh = behavior_policy(m, spec)
        ds = generate_dataset(m, beh, spec)
        cfg = benchmark_config(seed=spec.seed)
        hz = fit_hazard(ds, cfg)
        model = fit_rl4s(make_training_tuples(ds, hz), cfg, ds.n_states, ds.n_actions)
        start = start_distribution(spec)
        p_rl = exact_survival_probability(m, greedy_policy(model.q_table()), start)
        p_beh = exact_survival_probability(m, beh, start)
        p_opt = exact_survival_probability(m, greedy_policy(survival_value_iteration(m).q), start)
        good.append(p_beh - 0.01 <= p_rl <= p_opt + 1e-9)
        rows.append(f"{p_rl:.3f}")
    record_property("detail", f"{sum(good)}/5 seeds; RL4S survival {', '.join(rows)}")
    assert sum(good) >= 4


@pytest.mark.criterion(9, "death-bound last-k states score below release-bound states")
def test_stratified_separation(bench, bench_fits, record_property):
    ds = bench["dataset"]
    k = bench_fits["config"].last_k
    meds = {}
    for name, model in (("exact", survival_value_iteration(bench["mdp"]).q),
                        ("rl4s", bench_fits["rl4s"])):
        s = stratified_q_report(model, ds, last_k=k)["strata"]
        meds[name] = (s[f"death_last_{k}"]["median"], s["release"]["median"])
    record_property("detail", ", ".join(f"{n}: death {d:.3f} < release {r:.3f}"
                                        for n, (d, r) in meds.items()))
    assert all(d < r for d, r in meds.values())


@pytest.mark.criterion(10, "repro replay of the benchmark experiment reproduces output hashes")
def test_repro(record_property, capsys):
    manifest = ROOT / "experiments" / "benchmark.json"
    code = main(["repro", "--manifest", str(manifest)])
    out = capsys.readouterr()
    record_property("detail", (out.out or out.err).strip().splitlines()[0])
    assert code == 0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from survival_rl.batch import fit_baseline, fit_hazard, fit_rl4s, make_training_tuples
from survival_rl.cohort import behavior_policy, generate_dataset, generate_mdp
from survival_rl.registry import benchmark_config, benchmark_spec

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def bench():
    """Benchmark cohort 0: spec, MDP, behavior policy and its offline dataset."""
    spec = benchmark_spec("cohort-0")
    mdp = generate_mdp(spec)
    beh = behavior_policy(mdp, spec)
    return {"spec": spec, "mdp": mdp, "behavior": beh,
            "dataset": generate_dataset(mdp, beh, spec)}


@pytest.fixture(scope="session")
def bench_fits(bench):
    cfg = benchmark_config(seed=0)
    hz = fit_hazard(bench["dataset"], cfg)
    ds = bench["dataset"]
    rl4s = fit_rl4s(make_training_tuples(ds, hz), cfg, ds.n_states, ds.n_actions)
    return {"config": cfg, "hazard": hz, "rl4s": rl4s, "baseline": fit_baseline(ds, cfg)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one PASS/FAIL line per criterion -------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    item.config._criteria[mark.args[0]] = (mark.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

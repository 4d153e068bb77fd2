"""Command-line entry point: ``survival-rl <command> ...``.

Commands
    generate  cohort spec -> mdp.json, dataset.jsonl (+ manifest), behavior_policy.json
    solve     exact solvers on an MDP file (survival-vi, baseline-vi, enumerate)
    learn     tabular Q-learning against a simulator, writes the learning curve
    fit       offline pipelines on a dataset (hazard, rl4s, baseline)
    report    strata, action tables and the oracle policy comparison
    repro     replay a full experiment manifest and record or verify output hashes

Seeding: ``--seed`` is the single source of randomness. Each stage derives
its own stream from ``(seed, stage)``: mdp 0, dataset 1, learn 2, hazard 3,
rl4s 4, baseline 5.

Exit codes: 0 success, 2 usage or invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import reports
from .batch import (FitDivergedError, RL4SConfig, fit_baseline, fit_hazard, fit_rl4s,
                    load_fitted_q, make_training_tuples)
from .cohort import (STAGE_LEARN, CohortSpec, behavior_policy, generate_dataset, generate_mdp,
                     stage_rng)
from .hazard import HazardEstimator, build_training_set, evaluate
from .io import atomic_write_text, check_schema, read_json, sha256_file, write_json
from .mdp import HazardMdp, Policy, TrajectoryDataset
from .registry import PREFIX, benchmark_config, benchmark_spec
from .solvers import (ConvergenceError, SolverError, baseline_value_iteration,
                      enumerate_optimal, exact_survival_probability, greedy_policy,
                      survival_state_values, survival_value_iteration)
from .tabular import StepSizeSchedule, run_learner

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
LEARN_SCHEMA = "learn-config/1"
EXPERIMENT_SCHEMA = "experiment/1"
SUMMARY_SCHEMA = "report-summary/1"
POLICY_NAMES = ("optimal", "rl4s", "baseline", "behavior", "uniform")


class UsageError(Exception):
    """Bad arguments or unreadable/invalid input files (exit 2)."""


# -- input loading ----------------------------------------------------------

def _load(kind: str, path, loader):
    if path is None:
        raise UsageError(f"--{kind} is required")
    try:
        return loader(path)
    except FileNotFoundError:
        raise UsageError(f"{kind} file not found: {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid {kind} file {path}: {exc}") from None


def load_spec(path: str) -> CohortSpec:
    if path is not None and path.startswith(PREFIX):
        try:
            return benchmark_spec(path[len(PREFIX):])
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    return _load("spec", path, lambda p: CohortSpec.from_dict(read_json(p)))


def load_config(path: str | None) -> RL4SConfig:
    if path is None:
        return benchmark_config()
    return _load("config", path, lambda p: RL4SConfig.from_dict(read_json(p)))


def load_learn_config(path: str | None) -> dict:
    cfg = {"step_size": "harmonic", "c": 1.0, "n_updates": 1_000_000,
           "eval_every": 10_000, "gamma": 0.999}
    if path is None:
        return cfg
    doc = _load("config", path, read_json)
    try:
        check_schema(doc, LEARN_SCHEMA)
    except ValueError as exc:
        raise UsageError(f"invalid config file {path}: {exc}") from None
    unknown = set(doc) - set(cfg) - {"schema"}
    if unknown:
        raise UsageError(f"invalid config file {path}: unknown field {sorted(unknown)[0]!r}")
    cfg.update({k: v for k, v in doc.items() if k != "schema"})
    return cfg


def _mdp(path) -> HazardMdp:
    return _load("mdp", path, HazardMdp.load)


def _dataset(path) -> TrajectoryDataset:
    return _load("dataset", path, TrajectoryDataset.load)


def _policy(path) -> Policy:
    return _load("policy", path, lambda p: Policy.from_dict(read_json(p)))


def _start_distribution(dataset: TrajectoryDataset, mdp: HazardMdp) -> np.ndarray:
    start = dataset.meta.get("start_distribution")
    if start is not None:
        return np.asarray(start, dtype=float)
    out = np.zeros(mdp.n_states)
    out[mdp.transient_states] = 1.0 / mdp.transient_states.size
    return out


# -- commands ---------------------------------------------------------------

def cmd_generate(spec: CohortSpec, out: Path) -> list[Path]:
    mdp = generate_mdp(spec)
    beh = behavior_policy(mdp, spec)
    data = generate_dataset(mdp, beh, spec)
    written = [write_json(out / "cohort_spec.json", spec.to_dict()), mdp.save(out / "mdp.json"),
               write_json(out / "behavior_policy.json", beh.to_dict())]
    written.extend(data.save(out / "dataset.jsonl"))
    return written


def cmd_solve(mdp: HazardMdp, method: str, out: Path, gamma: float = 0.999) -> list[Path]:
    if method == "survival-vi":
        res = survival_value_iteration(mdp)
        pol = greedy_policy(res.q)
        rep = {"method": method, "iterations": res.iterations, "residual": res.residual,
               "state_values": res.q.values.max(axis=1).tolist()}
        return [write_json(out / "q_survival.json", res.q.to_dict()),
                write_json(out / "policy_optimal.json", pol.to_dict()),
                write_json(out / "solve_report.json", rep)]
    if method == "baseline-vi":
        res = baseline_value_iteration(mdp, gamma)
        pol = greedy_policy(res.q)
        rep = {"method": method, "gamma": gamma, "iterations": res.iterations,
               "residual": res.residual,
               "survival_of_greedy": survival_state_values(mdp, pol).tolist()}
        return [write_json(out / "q_baseline.json", res.q.to_dict()),
                write_json(out / "policy_baseline.json", pol.to_dict()),
                write_json(out / "solve_report.json", rep)]
    if method == "enumerate":
        best, pol = enumerate_optimal(mdp)
        vi_values = survival_state_values(mdp, greedy_policy(survival_value_iteration(mdp).q))
        rep = {"method": method, "best_values": best.tolist(), "vi_values": vi_values.tolist(),
               "max_abs_diff": float(np.abs(best - vi_values).max())}
        return [write_json(out / "policy_enumerated.json", pol.to_dict()),
                write_json(out / "solve_report.json", rep)]
    raise UsageError(f"unknown method {method!r}")


def cmd_learn(mdp: HazardMdp, learner: str, cfg: dict, seed: int, out: Path) -> list[Path]:
    try:
        schedule = StepSizeSchedule(cfg["step_size"], float(cfg["c"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    curve, state = run_learner(mdp, Policy.uniform(mdp.n_states, mdp.n_actions), learner,
                               schedule, int(cfg["n_updates"]), stage_rng(seed, STAGE_LEARN),
                               int(cfg["eval_every"]), float(cfg["gamma"]))
    first, last = curve.decile_means()
    transient = mdp.transient_states
    rep = {"learner": learner, "seed": seed, "config": cfg,
           "final_sup_error": curve.sup_error[-1],
           "final_policy_match_fraction": curve.policy_match_fraction[-1],
           "first_decile_mean": first, "last_decile_mean": last,
           "min_visits": int(state.visit_counts[transient].min())}
    return [atomic_write_text(out / "learning_curve.csv", curve.to_csv()),
            write_json(out / "q_learned.json", state.table().to_dict()),
            write_json(out / "learn_report.json", rep)]


def cmd_fit(dataset: TrajectoryDataset, pipeline: str, config: RL4SConfig, out: Path,
            mdp: HazardMdp | None = None, hazard: HazardEstimator | None = None) -> list[Path]:
    written = []
    if pipeline in ("hazard", "rl4s") and hazard is None:
        hazard = fit_hazard(dataset, config)
        X, y = build_training_set(dataset)
        rep = evaluate(hazard, X, y, mdp, min_visits=500 if mdp is not None else 0)
        written += [write_json(out / "hazard_model.json", hazard.to_dict()),
                    write_json(out / "hazard_report.json", rep)]
    if pipeline == "rl4s":
        tuples = make_training_tuples(dataset, hazard)
        model = fit_rl4s(tuples, config, dataset.n_states, dataset.n_actions)
        rep = {"pipeline": pipeline, "n_tuples": len(tuples), "epoch_loss": model.epoch_loss_}
        written += [write_json(out / "fitted_q_rl4s.json", model.to_dict()),
                    write_json(out / "policy_rl4s.json", greedy_policy(model.q_table()).to_dict()),
                    write_json(out / "fit_report_rl4s.json", rep)]
    elif pipeline == "baseline":
        model = fit_baseline(dataset, config)
        rep = {"pipeline": pipeline, "epoch_loss": model.epoch_loss_}
        written += [write_json(out / "fitted_q_baseline.json", model.to_dict()),
                    write_json(out / "policy_baseline_fitted.json",
                               greedy_policy(model.q_table()).to_dict()),
                    write_json(out / "fit_report_baseline.json", rep)]
    elif pipeline != "hazard":
        raise UsageError(f"unknown pipeline {pipeline!r}")
    return written


def cmd_report(mdp: HazardMdp, dataset: TrajectoryDataset, rl4s, baseline, behavior: Policy,
               out: Path, last_k: int = 24) -> list[Path]:
    if behavior.probs.shape != (mdp.n_states, mdp.n_actions):
        raise UsageError("behavior policy does not match the MDP")
    for name, model in (("rl4s", rl4s), ("baseline", baseline)):
        if model.q_table().shape != (mdp.n_states, mdp.n_actions):
            raise UsageError(f"{name} model does not match the MDP")
    q_star = survival_value_iteration(mdp).q
    policies = {"optimal": greedy_policy(q_star), "rl4s": greedy_policy(rl4s.q_table()),
                "baseline": greedy_policy(baseline.q_table()), "behavior": behavior,
                "uniform": Policy.uniform(mdp.n_states, mdp.n_actions)}
    start = _start_distribution(dataset, mdp)
    survival = {name: exact_survival_probability(mdp, pol, start)
                for name, pol in policies.items()}

    strata = {name: reports.stratified_q_report(model, dataset, last_k)
              for name, model in (("optimal", q_star), ("rl4s", rl4s), ("baseline", baseline))}
    actions = reports.action_distribution_report(policies, dataset)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "policies": {name: {"survival_probability": p, "mortality": 1.0 - p}
                     for name, p in survival.items()},
        "optimal_dominates": all(survival["optimal"] >= p - 1e-9 for p in survival.values()),
        "strata": {name: rep["strata"] for name, rep in strata.items()},
        "dataset": dataset.manifest(),
        "last_k": last_k,
    }
    written = [write_json(out / "summary.json", summary),
               write_json(out / "strata.json", {n: r["distributions"] for n, r in strata.items()}),
               write_json(out / "actions.json", actions),
               atomic_write_text(out / "actions.csv", reports.actions_csv(actions)),
               atomic_write_text(out / "vasopressor.csv", reports.vasopressor_csv(actions))]
    for name, rep in strata.items():
        written.append(atomic_write_text(out / f"strata_{name}.csv", reports.strata_csv(rep)))
    return written


# -- repro ------------------------------------------------------------------

def run_experiment(manifest: dict, out: Path) -> dict[str, str]:
    """Run every stage of ``manifest`` into ``out``; return ``{relative path: sha256}``."""
    if "benchmark" in manifest:
        spec = load_spec(PREFIX + manifest["benchmark"])
    else:
        spec = CohortSpec.from_dict(manifest["spec"])
    seed = int(manifest.get("seed", spec.seed))
    spec = spec.replace(seed=seed)
    config = (RL4SConfig.from_dict(manifest["config"]) if "config" in manifest
              else benchmark_config()).replace(seed=seed)

    cmd_generate(spec, out / "cohort")
    mdp = HazardMdp.load(out / "cohort" / "mdp.json")
    data = TrajectoryDataset.load(out / "cohort" / "dataset.jsonl")
    cmd_solve(mdp, "survival-vi", out / "solve_survival")
    cmd_solve(mdp, "baseline-vi", out / "solve_baseline", config.gamma)
    if "learn" in manifest:
        learn = load_learn_config(None)
        learn.update(manifest["learn"])
        cmd_learn(mdp, "survival-q", learn, seed, out / "learn")
    cmd_fit(data, "hazard", config, out / "fit", mdp)
    hazard = HazardEstimator.from_dict(read_json(out / "fit" / "hazard_model.json"))
    cmd_fit(data, "rl4s", config, out / "fit", mdp, hazard)
    cmd_fit(data, "baseline", config, out / "fit", mdp)
    cmd_report(mdp, data, load_fitted_q(read_json(out / "fit" / "fitted_q_rl4s.json")),
               load_fitted_q(read_json(out / "fit" / "fitted_q_baseline.json")),
               Policy.from_dict(read_json(out / "cohort" / "behavior_policy.json")),
               out / "report", config.last_k)
    return hash_tree(out)


def hash_tree(root: Path) -> dict[str, str]:
    return {p.relative_to(root).as_posix(): sha256_file(p)
            for p in sorted(root.rglob("*")) if p.is_file()}


def compare_hashes(expected: dict[str, str], actual: dict[str, str]) -> list[str]:
    problems = []
    for name in sorted(set(expected) | set(actual)):
        if name not in actual:
            problems.append(f"missing output {name}")
        elif name not in expected:
            problems.append(f"unexpected output {name}")
        elif expected[name] != actual[name]:
            problems.append(f"hash mismatch {name}")
    return problems


def cmd_repro(manifest_path: Path, out: Path | None, record: bool) -> tuple[int, list[str]]:
    manifest = _load("manifest", manifest_path, read_json)
    try:
        check_schema(manifest, EXPERIMENT_SCHEMA)
    except ValueError as exc:
        raise UsageError(f"invalid manifest {manifest_path}: {exc}") from None
    if out is None:
        with tempfile.TemporaryDirectory() as tmp:
            actual = run_experiment(manifest, Path(tmp))
    else:
        if out.exists():
            shutil.rmtree(out)
        actual = run_experiment(manifest, out)
    if record or "outputs" not in manifest:
        write_json(manifest_path, {**manifest, "outputs": actual})
        return EXIT_OK, [f"recorded {len(actual)} output hashes in {manifest_path}"]
    problems = compare_hashes(manifest["outputs"], actual)
    if problems:
        return EXIT_RUNTIME, problems
    return EXIT_OK, [f"verified {len(actual)} output hashes"]


# -- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="survival-rl", description="Survival-probability RL experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a synthetic cohort MDP and dataset")
    g.add_argument("--spec", required=True, help=f"cohort spec JSON, or {PREFIX}<name>")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="overrides the spec seed")

    s = sub.add_parser("solve", help="exact solvers")
    s.add_argument("--mdp", required=True)
    s.add_argument("--method", required=True, choices=["survival-vi", "baseline-vi", "enumerate"])
    s.add_argument("--config", help="rl4s config JSON (baseline gamma)")
    s.add_argument("--out", required=True)

    lr = sub.add_parser("learn", help="tabular Q-learning on simulated experience")
    lr.add_argument("--mdp", required=True)
    lr.add_argument("--learner", required=True, choices=["survival-q", "baseline-q"])
    lr.add_argument("--config", help="learn config JSON")
    lr.add_argument("--seed", type=int, default=0)
    lr.add_argument("--out", required=True)

    f = sub.add_parser("fit", help="offline pipelines on a dataset")
    f.add_argument("--dataset", required=True)
    f.add_argument("--pipeline", required=True, choices=["hazard", "rl4s", "baseline"])
    f.add_argument("--config", help="rl4s config JSON")
    f.add_argument("--mdp", help="true MDP, for hazard error reporting")
    f.add_argument("--hazard", help="fitted hazard model JSON to reuse for rl4s")
    f.add_argument("--seed", type=int, help="overrides the config seed")
    f.add_argument("--out", required=True)

    r = sub.add_parser("report", help="strata, action tables and oracle comparison")
    r.add_argument("--mdp", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--rl4s", required=True, help="fitted RL4S model JSON")
    r.add_argument("--baseline", required=True, help="fitted baseline model JSON")
    r.add_argument("--behavior", help="behavior policy JSON (default: next to the dataset)")
    r.add_argument("--config", help="rl4s config JSON (last_k)")
    r.add_argument("--out", required=True)

    rp = sub.add_parser("repro", help="replay an experiment manifest")
    rp.add_argument("--manifest", "--config", dest="manifest", required=True)
    rp.add_argument("--out", help="keep outputs here (default: temporary directory)")
    rp.add_argument("--record", action="store_true", help="store hashes instead of verifying")
    return p


def _dispatch(args) -> tuple[int, list[str]]:
    cmd = args.command
    if cmd == "generate":
        spec = load_spec(args.spec)
        if args.seed is not None:
            spec = spec.replace(seed=args.seed)
        written = cmd_generate(spec, Path(args.out))
    elif cmd == "solve":
        gamma = load_config(args.config).gamma
        written = cmd_solve(_mdp(args.mdp), args.method, Path(args.out), gamma)
    elif cmd == "learn":
        written = cmd_learn(_mdp(args.mdp), args.learner, load_learn_config(args.config),
                            args.seed, Path(args.out))
    elif cmd == "fit":
        config = load_config(args.config)
        if args.seed is not None:
            config = config.replace(seed=args.seed)
        mdp = _mdp(args.mdp) if args.mdp else None
        hazard = (_load("hazard", args.hazard,
                        lambda p: HazardEstimator.from_dict(read_json(p)))
                  if args.hazard else None)
        written = cmd_fit(_dataset(args.dataset), args.pipeline, config, Path(args.out),
                          mdp, hazard)
    elif cmd == "report":
        behavior = args.behavior or str(Path(args.dataset).with_name("behavior_policy.json"))
        written = cmd_report(_mdp(args.mdp), _dataset(args.dataset),
                             _load("rl4s", args.rl4s, lambda p: load_fitted_q(read_json(p))),
                             _load("baseline", args.baseline,
                                   lambda p: load_fitted_q(read_json(p))),
                             _policy(behavior), Path(args.out), load_config(args.config).last_k)
    else:
        return cmd_repro(Path(args.manifest), Path(args.out) if args.out else None, args.record)
    return EXIT_OK, [str(p) for p in written]


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        code, lines = _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ConvergenceError, FitDivergedError, RuntimeError, OSError,
            ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    for line in lines:
        print(line, file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())

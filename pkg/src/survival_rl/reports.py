"""Dataset-level summaries of fitted values and recommended actions.

Values are compared across methods after max-min scaling of the per-state
action-averaged Q values, stratified by episode outcome and by proximity
to the end of the episode.
"""

from __future__ import annotations

import csv
import io
from typing import Mapping

import numpy as np

from .mdp import Outcome, Policy, QTable, TrajectoryDataset

STATS = ("n", "min", "q1", "median", "q3", "max", "mean")


def as_q_values(model) -> np.ndarray:
    """Q array from a QTable, an array, or a fitted model with ``q_table()``."""
    if hasattr(model, "q_table"):
        model = model.q_table()
    if isinstance(model, QTable):
        return model.values
    return np.asarray(model, dtype=float)


def _transient_steps(dataset: TrajectoryDataset) -> dict:
    arr = dataset.step_arrays()
    outcome = np.array([ep.outcome.value for ep in dataset.episodes])
    keep = ~arr["terminal"]
    out = {k: v[keep] for k, v in arr.items()}
    out["outcome"] = outcome[out["episode"]] if len(outcome) else np.array([], dtype=str)
    return out


def _summary(x: np.ndarray) -> dict:
    if x.size == 0:
        return {"n": 0, "absent": True}
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return {"n": int(x.size), "min": float(x.min()), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(x.max()), "mean": float(x.mean())}


def max_min_scale(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values, float("nan"), float("nan")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values), lo, hi
    return (values - lo) / (hi - lo), lo, hi


def stratified_q_report(model, dataset: TrajectoryDataset, last_k: int = 24) -> dict:
    """Scaled per-state values stratified by outcome and by the last ``last_k`` steps.

    Each visited transient step contributes the action-average of its
    state's Q row. Scaling uses the minimum and maximum over all such steps.
    Truncated episodes are left out of the strata.
    """
    q = as_q_values(model)
    st = _transient_steps(dataset)
    scaled, lo, hi = max_min_scale(q[st["state"]].mean(axis=1))
    near_end = (st["steps_to_end"] >= 1) & (st["steps_to_end"] <= last_k)
    masks = {
        "release": st["outcome"] == Outcome.RELEASED.value,
        "death": st["outcome"] == Outcome.DIED.value,
    }
    masks[f"release_last_{last_k}"] = masks["release"] & near_end
    masks[f"death_last_{last_k}"] = masks["death"] & near_end
    strata = {name: _summary(scaled[m]) for name, m in masks.items()}
    return {
        "last_k": last_k,
        "scale": {"min": lo, "max": hi},
        "strata": strata,
        "distributions": {name: scaled[m].tolist() for name, m in masks.items()},
    }


def strata_csv(report: dict) -> str:
    """Long-format CSV ``stratum,statistic,value``; absent strata get a single ``n=0`` row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stratum", "statistic", "value"])
    for stratum, summ in report["strata"].items():
        if summ.get("absent"):
            w.writerow([stratum, "n", 0])
            continue
        for stat in STATS:
            w.writerow([stratum, stat, summ[stat] if stat == "n" else repr(summ[stat])])
    return buf.getvalue()


def _vaso_mask(n_actions: int) -> np.ndarray | None:
    if n_actions != 9:
        return None
    return np.arange(n_actions) // 3 > 0


def action_distribution_report(policies: Mapping[str, Policy], dataset: TrajectoryDataset,
                               include_observed: bool = True) -> dict:
    """Percent of dataset states assigned to each action, per policy.

    Stochastic policies contribute their action probabilities. With the
    9-action fluid x vasopressor grid the report also gives, for episodes
    ending in death, the percent of states with a vasopressor
    recommendation bucketed by steps remaining until death. The
    ``observed`` column uses the logged actions.
    """
    st = _transient_steps(dataset)
    A = dataset.n_actions
    states, actions = st["state"], st["action"]
    table: dict[str, list[float]] = {}
    step_probs: dict[str, np.ndarray] = {}
    for name, pol in policies.items():
        if pol.probs.shape != (dataset.n_states, A):
            raise ValueError(f"policy {name!r} does not match the dataset's state/action space")
        step_probs[name] = pol.probs[states]
    if include_observed:
        obs = np.zeros((states.size, A))
        obs[np.arange(states.size), actions] = 1.0
        step_probs["observed"] = obs
    for name, probs in step_probs.items():
        table[name] = (100.0 * probs.mean(axis=0)).tolist() if states.size else [0.0] * A

    report: dict = {"n_states_counted": int(states.size), "actions": table}
    vaso = _vaso_mask(A)
    if vaso is not None:
        died = st["outcome"] == Outcome.DIED.value
        to_end = st["steps_to_end"][died]
        buckets = sorted(set(to_end.tolist()))
        by_policy = {}
        for name, probs in step_probs.items():
            v = probs[died][:, vaso].sum(axis=1)
            by_policy[name] = {int(k): float(100.0 * v[to_end == k].mean()) for k in buckets}
        report["vasopressor_by_steps_to_death"] = by_policy
        report["bucket_counts"] = {int(k): int((to_end == k).sum()) for k in buckets}
    return report


def actions_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "action", "percent"])
    for name, pcts in report["actions"].items():
        for a, p in enumerate(pcts):
            w.writerow([name, a, repr(p)])
    return buf.getvalue()


def vasopressor_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "steps_to_death", "percent_vasopressor", "n_states"])
    counts = report.get("bucket_counts", {})
    for name, series in report.get("vasopressor_by_steps_to_death", {}).items():
        for k, p in series.items():
            w.writerow([name, k, repr(p), counts.get(k, 0)])
    return buf.getvalue()

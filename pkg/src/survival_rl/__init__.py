"""Survival-probability reinforcement learning on hazard MDPs.

Exact solvers, tabular survival Q-learning, a synthetic ICU-style cohort
simulator, a discrete-time hazard model and offline fitted survival-Q.
"""

from .batch import (RL4SConfig, ReturnQRegressor, SurvivalQRegressor, fit_baseline, fit_hazard,
                    fit_rl4s, make_training_tuples)
from .cohort import CohortSpec, behavior_policy, generate_dataset, generate_mdp
from .hazard import HazardEstimator
from .mdp import (Episode, ExperienceTuple, HazardMdp, Outcome, Policy, QTable,
                  TrajectoryDataset, ValueKind, rollout, sample_step, validate)
from .solvers import (apply_T, apply_T_pi, baseline_value_iteration, exact_survival_probability,
                      greedy_policy, survival_policy_evaluation, survival_value_iteration)
from .tabular import TabularQLearner, run_learner

__version__ = "0.1.0"

__all__ = [
    "CohortSpec", "Episode", "ExperienceTuple", "HazardEstimator", "HazardMdp", "Outcome",
    "Policy", "QTable", "RL4SConfig", "ReturnQRegressor", "SurvivalQRegressor",
    "TabularQLearner", "TrajectoryDataset", "ValueKind", "apply_T", "apply_T_pi",
    "baseline_value_iteration", "behavior_policy", "exact_survival_probability",
    "fit_baseline", "fit_hazard", "fit_rl4s", "generate_dataset", "generate_mdp",
    "greedy_policy", "make_training_tuples", "rollout", "run_learner", "sample_step",
    "survival_policy_evaluation", "survival_value_iteration", "validate",
]

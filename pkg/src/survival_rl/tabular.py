"""Tabular survival Q-learning and the terminal-reward Q-learning baseline.

Survival Q-learning regresses each visited entry towards

    1                                   if s is a release state
    (1 - h(s, a)) * max_a' Q(s', a')    otherwise

with per-pair step sizes. Hazards in the experience tuples are the true
ones, so the learner runs under exactly the assumptions of the stochastic
approximation argument.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .mdp import ExperienceTuple, HazardMdp, Policy, QTable, ValueKind
from .solvers import (BASELINE_GAMMA, baseline_value_iteration, greedy_policy,
                      survival_value_iteration)

LEARNERS = ("survival-q", "baseline-q")
STREAM_CHUNK = 1 << 16


@dataclass(frozen=True)
class StepSizeSchedule:
    """``harmonic``: alpha = c / (c + n) with n the pair's prior visit count.

    ``constant``: alpha = c, for diagnostics only (no convergence guarantee).
    """

    kind: str = "harmonic"
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "constant"):
            raise ValueError(f"unknown step-size kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.kind == "constant" and self.c > 1:
            raise ValueError("constant step size must lie in (0, 1]")

    @property
    def harmonic(self) -> bool:
        return self.kind == "harmonic"

    def alpha(self, visits: int) -> float:
        return self.c / (self.c + visits) if self.harmonic else self.c


@dataclass
class LearnerState:
    q: np.ndarray
    visit_counts: np.ndarray
    steps: int = 0
    value_kind: ValueKind = ValueKind.SURVIVAL

    @classmethod
    def zeros(cls, n_states: int, n_actions: int,
              value_kind: ValueKind = ValueKind.SURVIVAL) -> "LearnerState":
        return cls(np.zeros((n_states, n_actions)),
                   np.zeros((n_states, n_actions), dtype=np.int64), 0, value_kind)

    def table(self) -> QTable:
        return QTable(self.q.copy(), self.value_kind)


class BaselineTransition(NamedTuple):
    s: int
    a: int
    reward: float
    s_next: int
    done: bool


def survival_q_update(state: LearnerState, tup: ExperienceTuple,
                      schedule: StepSizeSchedule) -> LearnerState:
    """Apply one survival Q-learning update to ``state`` in place and return it."""
    s, a = tup.s, tup.a
    alpha = schedule.alpha(state.visit_counts[s, a])
    if tup.released:
        target = 1.0
    else:
        target = (1.0 - tup.h) * state.q[tup.s_next].max()
    state.q[s, a] = (1.0 - alpha) * state.q[s, a] + alpha * target
    state.visit_counts[s, a] += 1
    state.steps += 1
    return state


def baseline_q_update(state: LearnerState, tr: BaselineTransition, gamma: float,
                      schedule: StepSizeSchedule) -> LearnerState:
    """Watkins Q-learning update with terminal rewards, in place."""
    s, a = tr.s, tr.a
    alpha = schedule.alpha(state.visit_counts[s, a])
    target = tr.reward if tr.done else tr.reward + gamma * state.q[tr.s_next].max()
    state.q[s, a] = (1.0 - alpha) * state.q[s, a] + alpha * target
    state.visit_counts[s, a] += 1
    state.steps += 1
    return state


@dataclass
class LearningCurve:
    step: list[int] = field(default_factory=list)
    sup_error: list[float] = field(default_factory=list)
    policy_match_fraction: list[float] = field(default_factory=list)

    def append(self, step: int, err: float, match: float) -> None:
        self.step.append(step)
        self.sup_error.append(err)
        self.policy_match_fraction.append(match)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "sup_error", "policy_match_fraction"])
        for row in zip(self.step, self.sup_error, self.policy_match_fraction):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])
        return buf.getvalue()

    def decile_means(self) -> tuple[float, float]:
        """Mean sup error over the first and last 10% of evaluation points."""
        err = np.asarray(self.sup_error[1:] if len(self.sup_error) > 1 else self.sup_error)
        k = max(1, len(err) // 10)
        return float(err[:k].mean()), float(err[-k:].mean())


def _cdf(p: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.cumsum(p, axis=-1))


class ExperienceStream:
    """Episodic experience under a fixed exploration policy.

    Episodes start from ``start_distribution`` (default uniform over
    transient states) and restart on absorption.
    """

    def __init__(self, mdp: HazardMdp, policy: Policy, rng: np.random.Generator,
                 start_distribution=None):
        self.mdp = mdp
        self.rng = rng
        if start_distribution is None:
            start_distribution = (~mdp.absorbing).astype(float)
        start = np.asarray(start_distribution, dtype=float)
        if start[mdp.absorbing].any():
            raise ValueError("start distribution puts mass on absorbing states")
        self._args = (_cdf(mdp.transition), np.ascontiguousarray(mdp.hazard),
                      np.ascontiguousarray(mdp.release_flag), np.ascontiguousarray(mdp.death_flag),
                      mdp.death_state, _cdf(policy.probs), _cdf(start / start.sum()))
        self._state = -1

    def survival(self, n: int):
        S, A, S2, H, R, self._state = _kernels.survival_stream(
            *self._args, self.rng.random((n, 4)), self._state)
        return S, A, S2, H, R

    def baseline(self, n: int, terminal_rewards=(1.0, -1.0)):
        S, A, RW, S2, D, self._state = _kernels.baseline_stream(
            *self._args, self.rng.random((n, 4)), self._state, *terminal_rewards)
        return S, A, RW, S2, D

    def survival_tuples(self, n: int) -> list[ExperienceTuple]:
        S, A, S2, H, R = self.survival(n)
        return [ExperienceTuple(int(s), int(a), int(s2), float(h), bool(r))
                for s, a, s2, h, r in zip(S, A, S2, H, R)]

    def baseline_transitions(self, n: int) -> list[BaselineTransition]:
        S, A, RW, S2, D = self.baseline(n)
        return [BaselineTransition(int(s), int(a), float(r), int(s2), bool(d))
                for s, a, r, s2, d in zip(S, A, RW, S2, D)]


def run_learner(mdp: HazardMdp, exploration_policy: Policy, learner_kind: str,
                schedule: StepSizeSchedule, n_updates: int, rng: np.random.Generator,
                eval_every: int = 10_000, gamma: float = BASELINE_GAMMA,
                start_distribution=None, reference: QTable | None = None):
    """Generate experience and learn a Q table, recording the error curve.

    The curve tracks the sup-norm distance to the exact optimum (``reference``,
    computed if not given) and the fraction of transient states whose
    greedy action matches the exact greedy action.

    Returns ``(curve, state)``.
    """
    if learner_kind not in LEARNERS:
        raise ValueError(f"learner_kind must be one of {LEARNERS}")
    if n_updates < 0 or eval_every < 1:
        raise ValueError("n_updates must be >= 0 and eval_every >= 1")
    transient = mdp.transient_states
    if np.any(exploration_policy.probs[transient] == 0):
        warnings.warn("exploration policy leaves some (state, action) pairs unvisited; "
                      "convergence is not guaranteed", RuntimeWarning, stacklevel=2)
    survival = learner_kind == "survival-q"
    if reference is None:
        reference = (survival_value_iteration(mdp).q if survival
                     else baseline_value_iteration(mdp, gamma).q)
    ref = reference.values
    ref_actions = greedy_policy(ref).actions[transient]

    kind = ValueKind.SURVIVAL if survival else ValueKind.RETURN
    state = LearnerState.zeros(mdp.n_states, mdp.n_actions, kind)
    stream = ExperienceStream(mdp, exploration_policy, rng, start_distribution)
    curve = LearningCurve()

    def record():
        match = np.mean(np.argmax(state.q[transient], axis=1) == ref_actions)
        curve.append(state.steps, float(np.abs(state.q - ref).max()), float(match))

    record()
    done = 0
    while done < n_updates:
        n = min(eval_every, n_updates - done)
        for lo in range(0, n, STREAM_CHUNK):
            m = min(STREAM_CHUNK, n - lo)
            if survival:
                _kernels.survival_updates(state.q, state.visit_counts, *stream.survival(m),
                                          schedule.c, schedule.harmonic)
            else:
                S, A, RW, S2, D = stream.baseline(m)
                _kernels.baseline_updates(state.q, state.visit_counts, S, A, RW, S2, D,
                                          gamma, schedule.c, schedule.harmonic)
        done += n
        state.steps = done
        record()
    return curve, state


class TabularQLearner(BaseEstimator):
    """Estimator wrapper around :func:`run_learner`.

    ``fit(mdp, exploration_policy=None)`` learns from simulated experience
    (uniform exploration by default) and exposes ``q_``, ``visit_counts_``
    and ``curve_``.
    """

    def __init__(self, learner="survival-q", step_size="harmonic", c=1.0,
                 n_updates=1_000_000, eval_every=10_000, gamma=BASELINE_GAMMA,
                 random_state=0):
        self.learner = learner
        self.step_size = step_size
        self.c = c
        self.n_updates = n_updates
        self.eval_every = eval_every
        self.gamma = gamma
        self.random_state = random_state

    def fit(self, mdp: HazardMdp, exploration_policy: Policy | None = None,
            start_distribution=None):
        if exploration_policy is None:
            exploration_policy = Policy.uniform(mdp.n_states, mdp.n_actions)
        rng = np.random.default_rng(self.random_state)
        self.curve_, state = run_learner(
            mdp, exploration_policy, self.learner, StepSizeSchedule(self.step_size, self.c),
            self.n_updates, rng, self.eval_every, self.gamma, start_distribution)
        self.q_ = state.q
        self.visit_counts_ = state.visit_counts
        self.value_kind_ = state.value_kind
        return self

    def q_table(self) -> QTable:
        check_is_fitted(self, "q_")
        return QTable(self.q_, self.value_kind_)

    def predict(self, states) -> np.ndarray:
        """Greedy action for each state."""
        check_is_fitted(self, "q_")
        return np.argmax(self.q_[np.asarray(states, dtype=int)], axis=1)

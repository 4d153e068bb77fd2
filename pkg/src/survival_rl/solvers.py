"""Exact dynamic programming on hazard MDPs.

Survival operators (release indicator plus hazard-discounted backup):

    T_pi J(s, a) = 1                                   if R(s) = 1
                 = (1 - h(s, a)) E_{s'~p, a'~pi} J(s', a')  otherwise
    T J(s, a)    = same with max_{a'} J(s', a') in place of the policy average

Both contract in the sup norm with modulus ``1 - h_min``. The terminal
reward baseline is standard discounted Q with +1 on entering release and -1
on entering death.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterator, NamedTuple

import numpy as np

from .mdp import HazardMdp, Policy, QTable, ValueKind

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 10**6
BASELINE_GAMMA = 0.999


class SolverError(RuntimeError):
    """Internal numerical failure (singular system, residual too large)."""


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted before reaching the tolerance."""


class VIResult(NamedTuple):
    q: QTable
    iterations: int
    residual: float
    diffs: np.ndarray


def _values(J, mdp: HazardMdp) -> np.ndarray:
    arr = J.values if isinstance(J, QTable) else np.asarray(J, dtype=float)
    if arr.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"table shape {arr.shape} does not match MDP "
                         f"({mdp.n_states}, {mdp.n_actions})")
    return arr


def _check_policy(mdp: HazardMdp, policy: Policy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.probs.shape} does not match MDP")


def _survival_backup(mdp: HazardMdp, next_value: np.ndarray) -> np.ndarray:
    cont = mdp.transition @ next_value
    return np.where(mdp.release_flag[:, None], 1.0, (1.0 - mdp.hazard) * cont)


def apply_T_pi(mdp: HazardMdp, policy: Policy, J) -> QTable:
    """One application of the policy survival operator."""
    _check_policy(mdp, policy)
    arr = _values(J, mdp)
    return QTable(_survival_backup(mdp, (policy.probs * arr).sum(axis=1)), ValueKind.SURVIVAL)


def apply_T(mdp: HazardMdp, J) -> QTable:
    """One application of the optimal survival operator."""
    arr = _values(J, mdp)
    return QTable(_survival_backup(mdp, arr.max(axis=1)), ValueKind.SURVIVAL)


def survival_policy_evaluation(mdp: HazardMdp, policy: Policy) -> QTable:
    """Exact survival Q of ``policy`` from the |S||A| linear system Q = T_pi Q."""
    _check_policy(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    keep = np.where(mdp.release_flag[:, None], 0.0, 1.0 - mdp.hazard)
    M = (keep[:, :, None, None] * mdp.transition[:, :, :, None]
         * policy.probs[None, None, :, :]).reshape(S * A, S * A)
    b = np.repeat(mdp.release_flag.astype(float), A)
    try:
        q = np.linalg.solve(np.eye(S * A) - M, b).reshape(S, A)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular policy-evaluation system: {exc}") from exc
    residual = np.abs(apply_T_pi(mdp, policy, q).values - q).max()
    if residual > DEFAULT_TOL:
        raise SolverError(f"policy-evaluation residual {residual:.3e} exceeds {DEFAULT_TOL}")
    return QTable(q, ValueKind.SURVIVAL)


def survival_state_values(mdp: HazardMdp, policy: Policy) -> np.ndarray:
    """Survival probability V(s) under ``policy`` from the |S| state system.

    Independent of the Q system: solves
    V = R + (1 - R) * sum_a pi(a|s) (1 - h(s, a)) sum_s' p(s'|s, a) V(s').
    """
    _check_policy(mdp, policy)
    S = mdp.n_states
    pi = policy.probs
    K = np.einsum("sa,sa,sat->st", pi, 1.0 - mdp.hazard, mdp.transition)
    K[mdp.release_flag] = 0.0
    r = mdp.release_flag.astype(float)
    try:
        return np.linalg.solve(np.eye(S) - K, r)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular state-value system: {exc}") from exc


def exact_survival_probability(mdp: HazardMdp, policy: Policy, s0) -> float:
    """Probability of reaching release from ``s0`` under ``policy``.

    ``s0`` may be a state index or a start distribution over states.
    """
    V = survival_state_values(mdp, policy)
    if np.ndim(s0) == 0:
        return float(V[int(s0)])
    return float(np.dot(np.asarray(s0, dtype=float), V))


def survival_value_iteration(mdp: HazardMdp, tol: float = DEFAULT_TOL,
                             max_iters: int = DEFAULT_MAX_ITERS, init=None) -> VIResult:
    """Iterate T from J = 0 (or ``init``) until successive sup-differences <= tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    J = np.zeros((mdp.n_states, mdp.n_actions)) if init is None else _values(init, mdp).copy()
    diffs = []
    for k in range(1, max_iters + 1):
        J_next = apply_T(mdp, J).values
        d = float(np.abs(J_next - J).max())
        diffs.append(d)
        J = J_next
        if d <= tol:
            residual = float(np.abs(apply_T(mdp, J).values - J).max())
            return VIResult(QTable(J, ValueKind.SURVIVAL), k, residual, np.array(diffs))
    raise ConvergenceError(
        f"no convergence to tol={tol:g} in {max_iters} iterations "
        f"(last difference {diffs[-1]:.3e}); tol may be too tight for h_min={mdp.h_min:g}")


def iteration_bound(tol: float, h_min: float) -> int:
    """Iterations guaranteed to suffice for value iteration from J = 0."""
    return math.ceil(math.log(tol) / math.log(1.0 - h_min))


def greedy_policy(Q) -> Policy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    arr = Q.values if isinstance(Q, QTable) else np.asarray(Q, dtype=float)
    return Policy.from_actions(np.argmax(arr, axis=1), arr.shape[1])


# -- terminal-reward baseline --------------------------------------------

def _baseline_model(mdp: HazardMdp, terminal_rewards: tuple[float, float]):
    """Effective kernel and expected one-step reward for the +/-1 baseline."""
    r_release, r_death = terminal_rewards
    h = mdp.hazard[:, :, None]
    K = (1.0 - h) * mdp.transition
    K[:, :, mdp.death_state] += mdp.hazard
    absorbing = mdp.absorbing
    K[absorbing] = 0.0
    reward_into = np.where(mdp.release_flag, r_release, np.where(mdp.death_flag, r_death, 0.0))
    r = K @ reward_into
    # absorbing successors contribute no continuation value
    K_cont = K * (~absorbing)[None, None, :]
    return K_cont, r


def baseline_bellman(mdp: HazardMdp, Q, gamma: float,
                     terminal_rewards: tuple[float, float] = (1.0, -1.0)) -> np.ndarray:
    """Standard Bellman optimality backup of the terminal-reward baseline."""
    K, r = _baseline_model(mdp, terminal_rewards)
    return r + gamma * K @ _values(Q, mdp).max(axis=1)


def baseline_value_iteration(mdp: HazardMdp, gamma: float = BASELINE_GAMMA,
                             terminal_rewards: tuple[float, float] = (1.0, -1.0),
                             tol: float = 1e-9, max_iters: int = 1000) -> VIResult:
    """Optimal Q of the terminal-reward baseline.

    Solved by policy iteration with exact linear solves, since plain value
    iteration needs O(1/(1-gamma)) sweeps at gamma close to 1. ``iterations``
    counts policy-improvement rounds.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    K, r = _baseline_model(mdp, terminal_rewards)
    S = mdp.n_states
    actions = np.argmax(r, axis=1)
    for k in range(1, max_iters + 1):
        idx = np.arange(S)
        try:
            V = np.linalg.solve(np.eye(S) - gamma * K[idx, actions], r[idx, actions])
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular baseline system: {exc}") from exc
        Q = r + gamma * K @ V
        best = Q.max(axis=1)
        # keep the incumbent action unless strictly improved, avoids cycling on ties
        improved = best > Q[idx, actions] + 1e-12
        if not improved.any():
            residual = float(np.abs(baseline_bellman(mdp, Q, gamma, terminal_rewards) - Q).max())
            if residual > tol:
                raise SolverError(f"baseline residual {residual:.3e} exceeds tol {tol:g}")
            return VIResult(QTable(Q, ValueKind.RETURN), k, residual, np.array([]))
        actions = np.where(improved, np.argmax(Q, axis=1), actions)
    raise ConvergenceError(f"policy iteration did not stabilise in {max_iters} rounds")


# -- brute force -----------------------------------------------------------

def iter_deterministic_policies(mdp: HazardMdp) -> Iterator[Policy]:
    """All deterministic stationary policies, varying only on transient states."""
    transient = mdp.transient_states
    base = np.zeros(mdp.n_states, dtype=int)
    for choice in itertools.product(range(mdp.n_actions), repeat=transient.size):
        acts = base.copy()
        acts[transient] = choice
        yield Policy.from_actions(acts, mdp.n_actions)


def enumerate_optimal(mdp: HazardMdp, limit: int = 100_000) -> tuple[np.ndarray, Policy]:
    """Best survival probability per start state over all deterministic policies.

    Returns ``(best_values, best_policy)`` where ``best_policy`` attains the
    maximum at the first state it is reached for; best_values is the
    pointwise maximum over the enumeration.
    """
    count = mdp.n_actions ** mdp.transient_states.size
    if count > limit:
        raise ValueError(f"{count} policies exceeds enumeration limit {limit}")
    best = np.full(mdp.n_states, -np.inf)
    best_total = -np.inf
    best_policy = None
    for pol in iter_deterministic_policies(mdp):
        V = survival_state_values(mdp, pol)
        best = np.maximum(best, V)
        if V.sum() > best_total:
            best_total, best_policy = V.sum(), pol
    return best, best_policy

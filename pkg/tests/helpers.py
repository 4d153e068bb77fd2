"""Instance builders and independent oracles shared by the tests."""

from __future__ import annotations

import numpy as np

from survival_rl.mdp import ExperienceTuple, HazardMdp


def chain_mdp(h0: float = 0.1, h1: float = 0.2) -> HazardMdp:
    """s0 -> s1 -> release, single action; state 2 release, state 3 death."""
    P = np.zeros((4, 1, 4))
    P[0, 0, 1] = 1.0
    P[1, 0, 2] = 1.0
    P[2, 0, 2] = 1.0
    P[3, 0, 3] = 1.0
    h = np.array([[h0], [h1], [0.0], [1.0]])
    return HazardMdp(P, h, [False, False, True, False], [False, False, False, True],
                     min(h0, h1))


def random_mdp(rng: np.random.Generator, n_transient: int, n_actions: int,
               h_min: float = 0.05, h_max: float = 0.6, sparsity: float = 0.0) -> HazardMdp:
    """Random hazard MDP: transient states first, then release, then death."""
    S = n_transient + 2
    rel, dead = n_transient, n_transient + 1
    P = np.zeros((S, n_actions, S))
    for s in range(n_transient):
        for a in range(n_actions):
            w = rng.dirichlet(np.ones(S))
            if sparsity:
                w = np.where(rng.random(S) < sparsity, 0.0, w)
                if w.sum() == 0:
                    w[rng.integers(S)] = 1.0
            P[s, a] = w / w.sum()
    P[rel, :, rel] = 1.0
    P[dead, :, dead] = 1.0
    h = np.zeros((S, n_actions))
    h[:n_transient] = rng.uniform(h_min, h_max, size=(n_transient, n_actions))
    h[rng.integers(n_transient), rng.integers(n_actions)] = h_min
    h[dead] = 1.0
    release = np.zeros(S, dtype=bool)
    release[rel] = True
    death = np.zeros(S, dtype=bool)
    death[dead] = True
    return HazardMdp(P, h, release, death, h_min)


def value_iteration_oracle(mdp: HazardMdp, sweeps: int = 20000) -> np.ndarray:
    """Plain Gauss-Seidel style fixed point of the survival backup, by loops."""
    S, A = mdp.n_states, mdp.n_actions
    Q = np.zeros((S, A))
    for _ in range(sweeps):
        old = Q.copy()
        for s in range(S):
            for a in range(A):
                if mdp.release_flag[s]:
                    Q[s, a] = 1.0
                else:
                    Q[s, a] = (1 - mdp.hazard[s, a]) * sum(
                        mdp.transition[s, a, t] * Q[t].max() for t in range(S))
        if np.abs(Q - old).max() < 1e-14:
            break
    return Q


def largest_remainder(p: np.ndarray, n: int) -> np.ndarray:
    """Integer counts summing to ``n`` proportional to ``p``."""
    raw = p * n
    base = np.floor(raw).astype(int)
    short = n - base.sum()
    base[np.argsort(-(raw - base), kind="stable")[:short]] += 1
    return base


def exhaustive_tuples(mdp: HazardMdp, per_pair: int = 200) -> list[ExperienceTuple]:
    """Survival tuples for every pair, successors in exact proportion, true hazards."""
    out = []
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            counts = largest_remainder(mdp.transition[s, a], per_pair)
            for s2, c in enumerate(counts):
                out += [ExperienceTuple(s, a, s2, float(mdp.hazard[s, a]),
                                        bool(mdp.release_flag[s]))] * int(c)
    return out


def exhaustive_baseline(mdp: HazardMdp, per_pair: int = 200,
                        rewards: tuple[float, float] = (1.0, -1.0)) -> dict:
    """Terminal-reward transitions, death folded in as an explicit successor."""
    s_, a_, r_, s2_, d_ = [], [], [], [], []
    dead = mdp.death_state
    for s in mdp.transient_states:
        for a in range(mdp.n_actions):
            h = mdp.hazard[s, a]
            p = (1 - h) * mdp.transition[s, a]
            p[dead] += h
            for s2, c in enumerate(largest_remainder(p, per_pair)):
                r = rewards[0] if mdp.release_flag[s2] else rewards[1] if mdp.death_flag[s2] else 0.0
                done = bool(mdp.release_flag[s2] or mdp.death_flag[s2])
                s_ += [s] * c; a_ += [a] * c; r_ += [r] * c; s2_ += [s2] * c; d_ += [done] * c
    return {"s": np.array(s_), "a": np.array(a_), "reward": np.array(r_),
            "s_next": np.array(s2_), "done": np.array(d_)}

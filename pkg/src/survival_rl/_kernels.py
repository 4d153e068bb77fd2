"""Compiled inner loops for experience generation and tabular updates.

Randomness is supplied as pre-drawn uniforms so the kernels stay
deterministic under any numpy Generator. Each call's ``.py_func`` is the
same code uninterpreted by numba, used in tests.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _draw(cdf_row, u):
    x = u * cdf_row[-1]
    n = cdf_row.shape[0]
    for i in range(n):
        if x < cdf_row[i]:
            return i
    return n - 1


@njit(cache=True)
def survival_stream(trans_cdf, hazard, release, death, death_state, policy_cdf,
                    start_cdf, uniforms, s_init):
    """Experience tuples for survival Q-learning.

    Each tuple consumes one row ``(u_start, u_action, u_death, u_next)`` of
    ``uniforms``. From a transient state the successor is drawn from the
    survival-conditional kernel regardless of the death draw; the death
    draw only decides where the episode goes. Absorbing states emit one
    tuple each before the episode restarts. Returns the arrays and the
    state the stream stopped in (-1 means "restart").
    """
    n = uniforms.shape[0]
    S = np.empty(n, np.int64)
    A = np.empty(n, np.int64)
    S2 = np.empty(n, np.int64)
    H = np.empty(n, np.float64)
    R = np.empty(n, np.bool_)
    s = s_init
    for k in range(n):
        if s < 0:
            s = _draw(start_cdf, uniforms[k, 0])
        a = _draw(policy_cdf[s], uniforms[k, 1])
        S[k] = s
        A[k] = a
        if release[s]:
            S2[k] = s
            H[k] = 0.0
            R[k] = True
            s = -1
        elif death[s]:
            S2[k] = s
            H[k] = 1.0
            R[k] = False
            s = -1
        else:
            s2 = _draw(trans_cdf[s, a], uniforms[k, 3])
            S2[k] = s2
            H[k] = hazard[s, a]
            R[k] = False
            if uniforms[k, 2] < hazard[s, a]:
                s = death_state
            else:
                s = s2
    return S, A, S2, H, R, s


@njit(cache=True)
def baseline_stream(trans_cdf, hazard, release, death, death_state, policy_cdf,
                    start_cdf, uniforms, s_init, r_release, r_death):
    """Transitions ``(s, a, r, s_next, done)`` for terminal-reward Q-learning."""
    n = uniforms.shape[0]
    S = np.empty(n, np.int64)
    A = np.empty(n, np.int64)
    RW = np.empty(n, np.float64)
    S2 = np.empty(n, np.int64)
    D = np.empty(n, np.bool_)
    s = s_init
    for k in range(n):
        if s < 0:
            s = _draw(start_cdf, uniforms[k, 0])
        a = _draw(policy_cdf[s], uniforms[k, 1])
        S[k] = s
        A[k] = a
        if uniforms[k, 2] < hazard[s, a]:
            s2 = death_state
        else:
            s2 = _draw(trans_cdf[s, a], uniforms[k, 3])
        S2[k] = s2
        if release[s2]:
            RW[k] = r_release
            D[k] = True
            s = -1
        elif death[s2]:
            RW[k] = r_death
            D[k] = True
            s = -1
        else:
            RW[k] = 0.0
            D[k] = False
            s = s2
    return S, A, RW, S2, D, s


@njit(cache=True)
def _alpha(count, c, harmonic):
    if harmonic:
        return c / (c + count)
    return c


@njit(cache=True)
def survival_updates(q, counts, S, A, S2, H, R, c, harmonic):
    """Apply survival Q-learning updates in order, in place."""
    n_actions = q.shape[1]
    for k in range(S.shape[0]):
        s = S[k]
        a = A[k]
        alpha = _alpha(counts[s, a], c, harmonic)
        if R[k]:
            target = 1.0
        else:
            best = q[S2[k], 0]
            for b in range(1, n_actions):
                if q[S2[k], b] > best:
                    best = q[S2[k], b]
            target = (1.0 - H[k]) * best
        q[s, a] = (1.0 - alpha) * q[s, a] + alpha * target
        counts[s, a] += 1


@njit(cache=True)
def baseline_updates(q, counts, S, A, RW, S2, D, gamma, c, harmonic):
    """Apply standard Q-learning updates in order, in place."""
    n_actions = q.shape[1]
    for k in range(S.shape[0]):
        s = S[k]
        a = A[k]
        alpha = _alpha(counts[s, a], c, harmonic)
        target = RW[k]
        if not D[k]:
            best = q[S2[k], 0]
            for b in range(1, n_actions):
                if q[S2[k], b] > best:
                    best = q[S2[k], b]
            target += gamma * best
        q[s, a] = (1.0 - alpha) * q[s, a] + alpha * target
        counts[s, a] += 1

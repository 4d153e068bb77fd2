"""Finite MDPs with a discrete per-step hazard of death.

A :class:`HazardMdp` has two kinds of absorbing states: release states
(``R(s) = 1``) and death states (hazard 1). Every other state is transient
and must carry a hazard of at least ``h_min > 0`` under every action, which
is what makes the survival Bellman operators contractions.

Sampling a step is factorised: first a Bernoulli(h(s, a)) death draw, then,
on survival only, a successor draw from ``transition[s, a]``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .io import atomic_write_text, check_schema, dumps, read_json

MDP_SCHEMA = "hazard-mdp/1"
POLICY_SCHEMA = "policy/1"
QTABLE_SCHEMA = "q-table/1"
DATASET_SCHEMA = "trajectory-dataset/1"

ROW_TOL = 1e-12


class Outcome(str, enum.Enum):
    RELEASED = "RELEASED"
    DIED = "DIED"
    TRUNCATED = "TRUNCATED"


class ValueKind(str, enum.Enum):
    SURVIVAL = "SURVIVAL"
    RETURN = "RETURN"


class AbsorbingStateError(ValueError):
    """A step was requested from an absorbing (release or death) state."""


class Violation(NamedTuple):
    invariant: str
    index: tuple
    message: str


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HazardMdp:
    """Dense hazard MDP.

    Parameters
    ----------
    transition : array of shape (n_states, n_actions, n_states)
        Successor distribution given survival of the step.
    hazard : array of shape (n_states, n_actions)
        Probability of death within the step.
    release_flag, death_flag : bool arrays of shape (n_states,)
    h_min : float
        Declared lower bound of the hazard over transient states.

    Instances are immutable; the arrays are made read-only. Invariants are
    not enforced at construction, use :func:`validate`.
    """

    transition: np.ndarray
    hazard: np.ndarray
    release_flag: np.ndarray
    death_flag: np.ndarray
    h_min: float
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        h = np.array(self.hazard, dtype=float)
        rel = np.array(self.release_flag, dtype=bool)
        dead = np.array(self.death_flag, dtype=bool)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if h.shape != (S, A):
            raise ValueError(f"hazard must have shape {(S, A)}, got {h.shape}")
        if rel.shape != (S,) or dead.shape != (S,):
            raise ValueError("release_flag and death_flag must have shape (n_states,)")
        object.__setattr__(self, "transition", _readonly(P))
        object.__setattr__(self, "hazard", _readonly(h))
        object.__setattr__(self, "release_flag", _readonly(rel))
        object.__setattr__(self, "death_flag", _readonly(dead))
        object.__setattr__(self, "h_min", float(self.h_min))
        object.__setattr__(self, "_cdf", _readonly(np.cumsum(P, axis=2)))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def absorbing(self) -> np.ndarray:
        return self.release_flag | self.death_flag

    @property
    def transient_states(self) -> np.ndarray:
        return np.flatnonzero(~self.absorbing)

    @property
    def death_state(self) -> int:
        """The designated death state (lowest-index death state)."""
        idx = np.flatnonzero(self.death_flag)
        if idx.size == 0:
            raise ValueError("MDP has no death state")
        return int(idx[0])

    def is_absorbing(self, s: int) -> bool:
        return bool(self.release_flag[s] or self.death_flag[s])

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": MDP_SCHEMA,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "hazard": self.hazard.tolist(),
            "release": self.release_flag.tolist(),
            "death": self.death_flag.tolist(),
            "h_min": self.h_min,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HazardMdp":
        check_schema(doc, MDP_SCHEMA)
        mdp = cls(
            transition=doc["transition"],
            hazard=doc["hazard"],
            release_flag=doc["release"],
            death_flag=doc["death"],
            h_min=doc["h_min"],
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValueError("declared sizes do not match array shapes")
        return mdp

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "HazardMdp":
        return cls.from_dict(read_json(path))


def validate(mdp: HazardMdp) -> list[Violation]:
    """Return every invariant violation of ``mdp``; empty means valid."""
    out: list[Violation] = []
    P, h = mdp.transition, mdp.hazard
    rel, dead = mdp.release_flag, mdp.death_flag

    if np.any(P < 0):
        for s, a, s2 in zip(*np.nonzero(P < 0)):
            out.append(Violation("nonnegative-transition", (int(s), int(a), int(s2)),
                                 f"p({s2}|{s},{a}) = {P[s, a, s2]} < 0"))
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_TOL)):
        out.append(Violation("row-stochastic", (int(s), int(a)),
                             f"transition row ({s},{a}) sums to {sums[s, a]!r}"))
    for s, a in zip(*np.nonzero((h < 0) | (h > 1))):
        out.append(Violation("hazard-range", (int(s), int(a)),
                             f"h({s},{a}) = {h[s, a]} outside [0, 1]"))
    for s in np.flatnonzero(rel & dead):
        out.append(Violation("disjoint-flags", (int(s),),
                             f"state {s} is flagged both release and death"))
    if not mdp.h_min > 0:
        out.append(Violation("h_min-positive", (), f"declared h_min = {mdp.h_min} is not > 0"))
    transient = ~(rel | dead)
    low = transient[:, None] & (h < mdp.h_min)
    for s, a in zip(*np.nonzero(low)):
        out.append(Violation("h_min", (int(s), int(a)),
                             f"h({s},{a}) = {h[s, a]} below h_min = {mdp.h_min}"))
    for s in np.flatnonzero(dead):
        for a in np.flatnonzero(h[s] != 1.0):
            out.append(Violation("death-hazard", (int(s), int(a)),
                                 f"death state {s} has h = {h[s, a]} under action {a}"))
    for s in np.flatnonzero(rel | dead):
        for a in np.flatnonzero(P[s, :, s] != 1.0):
            out.append(Violation("absorbing-self-loop", (int(s), int(a)),
                                 f"absorbing state {s} does not self-loop under action {a}"))
    return out


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary Markov policy stored as an (n_states, n_actions) table.

    Deterministic policies are one-hot rows; build them with
    :meth:`from_actions`.
    """

    probs: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError("policy table must be 2-D")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", _readonly(p))
        object.__setattr__(self, "_cdf", _readonly(np.cumsum(p, axis=1)))

    @classmethod
    def from_actions(cls, actions: Sequence[int], n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        if np.any(actions < 0) or np.any(actions >= n_actions):
            raise ValueError("deterministic action out of range")
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    @property
    def actions(self) -> np.ndarray:
        """Most probable action per state (lowest index on ties)."""
        return np.argmax(self.probs, axis=1)

    def sample(self, s: int, rng: np.random.Generator) -> int:
        cdf = self._cdf[s]
        a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return min(a, cdf.size - 1)

    def to_dict(self) -> dict:
        return {"schema": POLICY_SCHEMA, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Policy":
        check_schema(doc, POLICY_SCHEMA)
        return cls(doc["probs"])


class ExperienceTuple(NamedTuple):
    """One learning sample ``(s, a, s_next, h, released)``.

    ``died`` marks transitions whose realised successor is the death state;
    survival learners skip bootstrapping through them because the death
    probability is already carried by ``h``.
    """

    s: int
    a: int
    s_next: int
    h: float
    released: bool
    died: bool = False


@dataclass(frozen=True, eq=False)
class QTable:
    values: np.ndarray
    value_kind: ValueKind = ValueKind.SURVIVAL

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("Q table must be 2-D")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "value_kind", ValueKind(self.value_kind))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_dict(self) -> dict:
        return {"schema": QTABLE_SCHEMA, "value_kind": self.value_kind.value,
                "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "QTable":
        check_schema(doc, QTABLE_SCHEMA)
        return cls(doc["values"], ValueKind(doc["value_kind"]))


# -- sampling -------------------------------------------------------------

def sample_step(mdp: HazardMdp, s: int, a: int, rng: np.random.Generator) -> tuple[bool, int]:
    """Draw one step from transient state ``s`` under action ``a``.

    Returns ``(died, s_next)``; on death ``s_next`` is the designated death
    state.
    """
    if mdp.is_absorbing(s):
        raise AbsorbingStateError(f"state {s} is absorbing")
    if rng.random() < mdp.hazard[s, a]:
        return True, mdp.death_state
    return False, _successor(mdp, s, a, rng.random())


def _successor(mdp: HazardMdp, s: int, a: int, u: float) -> int:
    cdf = mdp._cdf[s, a]
    s2 = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(s2, mdp.n_states - 1)


class Step(NamedTuple):
    state: int
    action: int
    next_state: int
    t: int


@dataclass(frozen=True)
class Episode:
    """One trajectory.

    For absorbed episodes the final entry of ``steps`` is a terminal record
    at the absorbing state (``state == next_state``); ``terminal_step`` is
    its index, i.e. the number of real transitions.
    """

    steps: tuple[Step, ...]
    outcome: Outcome
    terminal_step: int

    @property
    def length(self) -> int:
        return self.terminal_step

    @property
    def transitions(self) -> tuple[Step, ...]:
        """Steps taken from non-absorbing states."""
        if self.outcome is Outcome.TRUNCATED:
            return self.steps
        return self.steps[:-1]

    def to_dict(self) -> dict:
        return {"steps": [list(st) for st in self.steps], "outcome": self.outcome.value,
                "terminal_step": self.terminal_step}

    @classmethod
    def from_dict(cls, doc: dict) -> "Episode":
        steps = tuple(Step(*map(int, st)) for st in doc["steps"])
        return cls(steps, Outcome(doc["outcome"]), int(doc["terminal_step"]))


def rollout(mdp: HazardMdp, policy: Policy, s0: int, rng: np.random.Generator,
            max_steps: int, record_terminal: bool = True) -> Episode:
    """Run ``policy`` from ``s0`` until absorption or ``max_steps`` transitions."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if mdp.is_absorbing(s0):
        raise AbsorbingStateError(f"start state {s0} is absorbing")
    steps: list[Step] = []
    s = s0
    for t in range(max_steps):
        a = policy.sample(s, rng)
        _, s2 = sample_step(mdp, s, a, rng)
        steps.append(Step(s, a, s2, t))
        s = s2
        if mdp.is_absorbing(s):
            outcome = Outcome.RELEASED if mdp.release_flag[s] else Outcome.DIED
            if record_terminal:
                steps.append(Step(s, policy.sample(s, rng), s, t + 1))
            return Episode(tuple(steps), outcome, t + 1)
    return Episode(tuple(steps), Outcome.TRUNCATED, max_steps)


@dataclass
class TrajectoryDataset:
    """Offline collection of episodes over a fixed state/action space."""

    episodes: list[Episode]
    n_states: int
    n_actions: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def outcome_counts(self) -> dict[str, int]:
        counts = {o.value: 0 for o in Outcome}
        for ep in self.episodes:
            counts[ep.outcome.value] += 1
        return counts

    @property
    def n_steps(self) -> int:
        return sum(len(ep.steps) for ep in self.episodes)

    @property
    def mortality(self) -> float:
        """Fraction of absorbed episodes ending in death (truncated excluded)."""
        c = self.outcome_counts()
        done = c["RELEASED"] + c["DIED"]
        return c["DIED"] / done if done else float("nan")

    def step_arrays(self) -> dict[str, np.ndarray]:
        """Flatten all steps into aligned integer arrays.

        Keys: ``episode``, ``t``, ``state``, ``action``, ``next_state``,
        ``terminal`` (terminal absorbing record), ``steps_to_end``
        (transitions left before absorption, -1 for truncated episodes).
        """
        rows = []
        for i, ep in enumerate(self.episodes):
            absorbed = ep.outcome is not Outcome.TRUNCATED
            for k, st in enumerate(ep.steps):
                term = absorbed and k == len(ep.steps) - 1
                to_end = ep.terminal_step - st.t if absorbed else -1
                rows.append((i, st.t, st.state, st.action, st.next_state, term, to_end))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 7)
        keys = ("episode", "t", "state", "action", "next_state", "terminal", "steps_to_end")
        out = {k: arr[:, j] for j, k in enumerate(keys)}
        out["terminal"] = out["terminal"].astype(bool)
        return out

    def manifest(self) -> dict:
        c = self.outcome_counts()
        doc = {
            "schema": DATASET_SCHEMA,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_episodes": len(self.episodes),
            "n_steps": self.n_steps,
            "n_released": c["RELEASED"],
            "n_died": c["DIED"],
            "n_truncated": c["TRUNCATED"],
            "mortality": self.mortality if len(self.episodes) else None,
        }
        doc.update(self.meta)
        return doc

    def iter_jsonl(self) -> Iterable[str]:
        for i, ep in enumerate(self.episodes):
            doc = {"episode": i, **ep.to_dict()}
            yield json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def save(self, path) -> tuple[Path, Path]:
        """Write ``path`` (JSON lines) and the sibling ``<stem>.manifest.json``."""
        path = Path(path)
        body = "".join(line + "\n" for line in self.iter_jsonl())
        atomic_write_text(path, body)
        man = manifest_path(path)
        atomic_write_text(man, dumps(self.manifest()))
        return path, man

    @classmethod
    def load(cls, path) -> "TrajectoryDataset":
        path = Path(path)
        man = read_json(manifest_path(path))
        check_schema(man, DATASET_SCHEMA)
        episodes = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    episodes.append(Episode.from_dict(json.loads(line)))
        if len(episodes) != man["n_episodes"]:
            raise ValueError("episode count does not match manifest")
        known = {"schema", "n_states", "n_actions", "n_episodes", "n_steps", "n_released",
                 "n_died", "n_truncated", "mortality"}
        meta = {k: v for k, v in man.items() if k not in known}
        return cls(episodes, man["n_states"], man["n_actions"], meta)


def manifest_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".manifest.json")

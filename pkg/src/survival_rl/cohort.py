"""Synthetic critically-ill cohort on a severity ladder.

Transient states are severity levels ``0 .. L-1`` (0 mildest); state ``L``
is release and ``L+1`` is death. Actions form a fluid x vasopressor grid
(action ``a`` has fluid dose ``a % 3`` and vasopressor dose ``a // 3``).
Each level has an ideal dose, jittered per level by the seed; the closer an
action is to it, the more it pushes severity down. Vasopressors add a side
effect hazard in mild states. Sliding below level 0 means release; death
happens only through the hazard.

Randomness is derived from ``spec.seed`` by stage: ``stage_rng(seed, STAGE_*)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .io import check_schema
from .mdp import HazardMdp, Policy, TrajectoryDataset, rollout, validate
from .solvers import exact_survival_probability, greedy_policy, survival_value_iteration

SPEC_SCHEMA = "cohort-spec/1"

STAGE_MDP = 0
STAGE_DATASET = 1
STAGE_LEARN = 2
STAGE_HAZARD = 3
STAGE_RL4S = 4
STAGE_BASELINE = 5


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    """Independent generator for one pipeline stage of an experiment seed."""
    return np.random.default_rng([int(seed), int(stage)])


def stage_seed(seed: int, stage: int) -> int:
    """Integer seed for estimators that take a ``random_state``."""
    return int(np.random.SeedSequence([int(seed), int(stage)]).generate_state(1)[0])


class CohortSpecError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class CohortSpec:
    n_severity_levels: int = 8
    n_actions: int = 9
    hazard_range: tuple[float, float] = (0.02, 0.4)
    treatment_effect: float = 3.0
    noise: float = 0.6
    behavior_epsilon: float = 0.3
    n_episodes: int = 20_000
    max_steps: int = 200
    seed: int = 0
    natural_drift: float = 0.3
    side_effect: float = 0.5
    heterogeneity: float = 0.3
    hazard_exponent: float = 6.0
    dose_tolerance: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "hazard_range", tuple(float(x) for x in self.hazard_range))
        self.check()

    def check(self) -> None:
        if self.n_severity_levels < 1:
            raise CohortSpecError("n_severity_levels", "must be >= 1")
        if self.n_actions < 1:
            raise CohortSpecError("n_actions", "must be >= 1")
        if len(self.hazard_range) != 2:
            raise CohortSpecError("hazard_range", "must be a pair (h_min, h_max)")
        lo, hi = self.hazard_range
        if not 0.0 < lo <= hi <= 1.0:
            raise CohortSpecError("hazard_range", f"need 0 < h_min <= h_max <= 1, got {lo}, {hi}")
        if self.treatment_effect < 0:
            raise CohortSpecError("treatment_effect", "must be >= 0")
        if not self.noise > 0:
            raise CohortSpecError("noise", "must be > 0")
        if not 0.0 <= self.behavior_epsilon <= 1.0:
            raise CohortSpecError("behavior_epsilon", "must lie in [0, 1]")
        if self.n_episodes < 0:
            raise CohortSpecError("n_episodes", "must be >= 0")
        if self.max_steps < 1:
            raise CohortSpecError("max_steps", "must be >= 1")
        if self.side_effect < 0:
            raise CohortSpecError("side_effect", "must be >= 0")
        if self.heterogeneity < 0:
            raise CohortSpecError("heterogeneity", "must be >= 0")
        if not self.hazard_exponent > 0:
            raise CohortSpecError("hazard_exponent", "must be > 0")
        if not self.dose_tolerance > 0:
            raise CohortSpecError("dose_tolerance", "must be > 0")

    @property
    def n_states(self) -> int:
        return self.n_severity_levels + 2

    @property
    def release_state(self) -> int:
        return self.n_severity_levels

    @property
    def death_state(self) -> int:
        return self.n_severity_levels + 1

    def replace(self, **changes) -> "CohortSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["hazard_range"] = list(self.hazard_range)
        doc["schema"] = SPEC_SCHEMA
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CohortSpec":
        check_schema(doc, SPEC_SCHEMA)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names - {"schema"}
        if unknown:
            raise CohortSpecError(sorted(unknown)[0], "unknown field")
        kwargs = {k: v for k, v in doc.items() if k in names}
        for k in ("n_severity_levels", "n_actions", "n_episodes", "max_steps", "seed"):
            if k in kwargs and (isinstance(kwargs[k], bool) or not isinstance(kwargs[k], int)):
                raise CohortSpecError(k, "must be an integer")
        return cls(**kwargs)


def action_doses(n_actions: int) -> np.ndarray:
    """(fluid, vasopressor) dose per action, each scaled to [0, 1]."""
    a = np.arange(n_actions)
    fluid = (a % 3) / 2.0 if n_actions > 1 else np.zeros(n_actions)
    vmax = max(1, (n_actions - 1) // 3)
    vaso = (a // 3) / vmax
    return np.column_stack([fluid, vaso])


def _severity(L: int) -> np.ndarray:
    return np.arange(L) / (L - 1) if L > 1 else np.array([0.5])


def _level_bins(center: float, sd: float, L: int) -> np.ndarray:
    """Mass of N(center, sd) on (release, level 0, ..., level L-1)."""
    nd = NormalDist(center, sd)
    edges = [nd.cdf(k - 0.5) for k in range(L)]
    out = np.empty(L + 1)
    out[0] = edges[0]
    for k in range(L - 1):
        out[k + 1] = edges[k + 1] - edges[k]
    out[L] = 1.0 - edges[L - 1]
    return np.clip(out, 0.0, None)


def generate_mdp(spec: CohortSpec) -> HazardMdp:
    """Build the severity-ladder hazard MDP described by ``spec``."""
    spec.check()
    rng = stage_rng(spec.seed, STAGE_MDP)
    L, A = spec.n_severity_levels, spec.n_actions
    S = spec.n_states
    rel, dead = spec.release_state, spec.death_state
    h_lo, h_hi = spec.hazard_range
    x = _severity(L)
    doses = action_doses(A)

    ideal = np.column_stack([np.minimum(1.0, 2.0 * x), np.maximum(0.0, 2.0 * x - 1.0)])
    ideal = np.clip(ideal + spec.heterogeneity * rng.standard_normal(ideal.shape), 0.0, 1.0)
    dist = np.linalg.norm(doses[None, :, :] - ideal[:, None, :], axis=2)
    benefit = np.exp(-0.5 * (dist / spec.dose_tolerance) ** 2)

    base = h_lo + (h_hi - h_lo) * x**spec.hazard_exponent
    hz = base[:, None] * (1.0 + spec.side_effect * doses[None, :, 1] * (1.0 - x[:, None]))
    hz *= 1.0 - 0.3 * benefit * x[:, None]
    hz = np.maximum.accumulate(np.clip(hz, h_lo, h_hi), axis=0)

    drift = spec.natural_drift - spec.treatment_effect * benefit
    P = np.zeros((S, A, S))
    hazard = np.zeros((S, A))
    for l in range(L):
        for a in range(A):
            mass = _level_bins(l + drift[l, a], spec.noise, L)
            total = mass.sum()
            if not np.isfinite(total) or total <= 0:
                raise CohortSpecError("noise", f"degenerate transition at level {l}, action {a}")
            mass = mass / total
            P[l, a, rel] = mass[0]
            P[l, a, :L] = mass[1:]
        hazard[l] = hz[l]
    P[rel, :, rel] = 1.0
    P[dead, :, dead] = 1.0
    hazard[dead] = 1.0

    release = np.zeros(S, dtype=bool)
    release[rel] = True
    death = np.zeros(S, dtype=bool)
    death[dead] = True
    mdp = HazardMdp(P, hazard, release, death, h_lo)
    problems = validate(mdp)
    if problems:
        raise CohortSpecError("spec", f"generated MDP is invalid: {problems[0].message}")
    return mdp


def start_distribution(spec: CohortSpec) -> np.ndarray:
    """Truncated discretised bell over severity levels, centred mid-ladder."""
    L = spec.n_severity_levels
    mu = (L - 1) / 2.0
    sd = max(L / 4.0, 0.5)
    w = np.exp(-0.5 * ((np.arange(L) - mu) / sd) ** 2)
    out = np.zeros(spec.n_states)
    out[:L] = w / w.sum()
    return out


def behavior_policy(mdp: HazardMdp, spec: CohortSpec) -> Policy:
    """Epsilon-soft optimal policy: the clinician stand-in."""
    opt = greedy_policy(survival_value_iteration(mdp).q).probs
    eps = spec.behavior_epsilon
    return Policy((1.0 - eps) * opt + eps / mdp.n_actions)


def generate_dataset(mdp: HazardMdp, policy: Policy, spec: CohortSpec,
                     rng: np.random.Generator | None = None) -> TrajectoryDataset:
    """Roll out ``spec.n_episodes`` episodes, one independent stream per episode."""
    if rng is None:
        rng = stage_rng(spec.seed, STAGE_DATASET)
    start = start_distribution(spec)
    if start.shape[0] != mdp.n_states:
        raise ValueError("spec does not match MDP size")
    start_cdf = np.cumsum(start)
    root = np.random.SeedSequence(rng.integers(0, 2**63, dtype=np.int64).item())
    episodes = []
    for child in root.spawn(spec.n_episodes):
        ep_rng = np.random.default_rng(child)
        s0 = int(np.searchsorted(start_cdf, ep_rng.random() * start_cdf[-1], side="right"))
        episodes.append(rollout(mdp, policy, s0, ep_rng, spec.max_steps))
    meta = {"start_distribution": start.tolist(), "cohort_spec": spec.to_dict()}
    return TrajectoryDataset(episodes, mdp.n_states, mdp.n_actions, meta)


def vasopressor_actions(n_actions: int) -> np.ndarray:
    """Boolean mask of actions with a nonzero vasopressor dose."""
    return np.arange(n_actions) // 3 > 0


def expected_mortality(mdp: HazardMdp, policy: Policy, spec: CohortSpec) -> float:
    """Exact death probability from the start distribution under ``policy``."""
    return 1.0 - exact_survival_probability(mdp, policy, start_distribution(spec))


__all__ = [
    "CohortSpec", "CohortSpecError", "generate_mdp", "behavior_policy", "generate_dataset",
    "start_distribution", "stage_rng", "stage_seed", "action_doses", "vasopressor_actions",
    "expected_mortality",
]

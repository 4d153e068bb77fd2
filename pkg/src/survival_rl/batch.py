"""Offline fitted survival-Q iteration and the terminal-reward baseline.

Both learners share one linear TD engine: minibatch gradient steps on the
squared error to a bootstrapped target computed from polyak-averaged
target weights,

    survival: y = 1{R(s)=1} + 1{R(s)=0} (1 - h_hat(s, a)) max_a' Q_tgt(s', a')
    return:   y = r + gamma (1 - done) max_a' Q_tgt(s', a')

Transitions that realise death are left out of the survival regression:
the estimated hazard already accounts for them, and bootstrapping through
the death state would count the death risk twice.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cohort import STAGE_BASELINE, STAGE_RL4S, stage_seed
from .features import FeatureMap
from .hazard import CLAMP, HazardEstimator, build_training_set
from .io import check_schema
from .mdp import ExperienceTuple, Outcome, QTable, TrajectoryDataset, ValueKind

CONFIG_SCHEMA = "rl4s-config/1"
MODEL_SCHEMA = "fitted-q/1"
OPTIMIZERS = ("momentum", "adam")


class FitDivergedError(FloatingPointError):
    """Loss or weights became non-finite during fitting."""


@dataclass(frozen=True)
class RL4SConfig:
    """Hyper-parameters for the offline pipeline.

    Defaults for batch size, learning rate, polyak rate and baseline gamma
    follow the reference setup; ``extra_gamma`` multiplies the survival
    discount and is 1 (pure hazard discounting) by default.
    """

    feature_mode: str = "tabular"
    batch_size: int = 124
    lr: float = 3e-4
    tau: float = 0.005
    optimizer: str = "adam"
    momentum: float = 0.9
    n_iterations: int = 51932
    n_epochs: int = 7
    average_last_epochs: int = 3
    extra_gamma: float = 1.0
    gamma: float = 0.999
    terminal_rewards: tuple[float, float] = (1.0, -1.0)
    seed: int = 0
    hazard_feature_mode: str = "tabular"
    hazard_positive_weight: float = 1.0
    last_k: int = 24

    def __post_init__(self):
        object.__setattr__(self, "terminal_rewards", tuple(float(r) for r in self.terminal_rewards))
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.n_epochs < 1 or self.n_iterations < 1:
            raise ValueError("batch_size, n_iterations and n_epochs must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.extra_gamma <= 1.0:
            raise ValueError("extra_gamma must lie in (0, 1]")

    def replace(self, **changes) -> "RL4SConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["terminal_rewards"] = list(self.terminal_rewards)
        doc["schema"] = CONFIG_SCHEMA
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RL4SConfig":
        check_schema(doc, CONFIG_SCHEMA)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names - {"schema"}
        if unknown:
            raise ValueError(f"unknown config field {sorted(unknown)[0]!r}")
        return cls(**{k: v for k, v in doc.items() if k in names})

    def estimator_params(self) -> dict:
        return {"feature_mode": self.feature_mode, "batch_size": self.batch_size,
                "lr": self.lr, "tau": self.tau, "optimizer": self.optimizer,
                "momentum": self.momentum, "n_iterations": self.n_iterations,
                "n_epochs": self.n_epochs,
                "average_last_epochs": self.average_last_epochs}


# -- data preparation -------------------------------------------------------

def absorbing_flags(dataset: TrajectoryDataset) -> tuple[np.ndarray, np.ndarray]:
    """Release and death flags inferred from where episodes end."""
    release = np.zeros(dataset.n_states, dtype=bool)
    death = np.zeros(dataset.n_states, dtype=bool)
    for ep in dataset:
        if ep.outcome is Outcome.RELEASED:
            release[ep.steps[-1].next_state] = True
        elif ep.outcome is Outcome.DIED:
            death[ep.steps[-1].next_state] = True
    return release, death


def make_training_tuples(dataset: TrajectoryDataset, hazard_model: HazardEstimator,
                         flags: tuple[np.ndarray, np.ndarray] | None = None
                         ) -> list[ExperienceTuple]:
    """One experience tuple per dataset step, hazards replaced by estimates.

    Estimated hazards are clamped to ``[1e-6, 1 - 1e-6]``; release states
    get hazard 0 and death states hazard 1.
    """
    release, death = flags if flags is not None else absorbing_flags(dataset)
    h = np.clip(hazard_model.hazard_table(), CLAMP, 1.0 - CLAMP)
    h[release] = 0.0
    h[death] = 1.0
    out = []
    for ep in dataset:
        for st in ep.steps:
            s, a, s2 = st.state, st.action, st.next_state
            out.append(ExperienceTuple(s, a, s2, float(h[s, a]), bool(release[s]),
                                       bool(death[s2] and not death[s])))
    return out


def baseline_transitions(dataset: TrajectoryDataset,
                         terminal_rewards: tuple[float, float] = (1.0, -1.0),
                         flags: tuple[np.ndarray, np.ndarray] | None = None) -> dict:
    """Arrays ``s, a, reward, s_next, done`` for the terminal-reward learner.

    Terminal records at absorbing states become zero-reward done transitions.
    """
    release, death = flags if flags is not None else absorbing_flags(dataset)
    arr = dataset.step_arrays()
    s, s2 = arr["state"], arr["next_state"]
    absorbing = release | death
    from_transient = ~absorbing[s]
    reward = np.where(from_transient & release[s2], terminal_rewards[0],
                      np.where(from_transient & death[s2], terminal_rewards[1], 0.0))
    done = absorbing[s2] | absorbing[s]
    return {"s": s, "a": arr["action"], "reward": reward, "s_next": s2, "done": done}


def _tuple_arrays(tuples) -> dict:
    if isinstance(tuples, dict):
        return tuples
    if len(tuples) == 0:
        raise ValueError("no training tuples")
    cols = list(zip(*tuples))
    out = {"s": np.asarray(cols[0], dtype=np.int64), "a": np.asarray(cols[1], dtype=np.int64),
           "s_next": np.asarray(cols[2], dtype=np.int64), "h": np.asarray(cols[3], dtype=float),
           "released": np.asarray(cols[4], dtype=bool)}
    out["died"] = (np.asarray(cols[5], dtype=bool) if len(cols) > 5
                   else np.zeros(len(tuples), dtype=bool))
    return out


# -- linear TD engine -------------------------------------------------------

class _LinearTDQ(BaseEstimator):
    value_kind = ValueKind.SURVIVAL

    def __init__(self, n_states=None, n_actions=None, feature_mode="tabular", batch_size=124,
                 lr=3e-4, tau=0.005, optimizer="adam", momentum=0.9, n_iterations=51932,
                 n_epochs=7, average_last_epochs=3, random_state=0):
        self.n_states = n_states
        self.n_actions = n_actions
        self.feature_mode = feature_mode
        self.batch_size = batch_size
        self.lr = lr
        self.tau = tau
        self.optimizer = optimizer
        self.momentum = momentum
        self.n_iterations = n_iterations
        self.n_epochs = n_epochs
        self.average_last_epochs = average_last_epochs
        self.random_state = random_state

    def _train(self, s, a, s_next, reward, discount):
        """Fit ``Q(s, a) ~ reward + discount * max_a' Q_tgt(s_next, a')``."""
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        n = s.size
        if n == 0:
            raise ValueError("no training samples")
        S = self.n_states if self.n_states is not None else int(max(s.max(), s_next.max())) + 1
        A = self.n_actions if self.n_actions is not None else int(a.max()) + 1
        fmap = FeatureMap(self.feature_mode, S, A)
        phi = fmap.indices(s, a)
        pairs = fmap.all_pairs()
        rng = np.random.default_rng(self.random_state)

        w = np.zeros(fmap.n_features)
        w_tgt = w.copy()
        m1 = np.zeros_like(w)
        m2 = np.zeros_like(w)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        # minibatches cycle through fresh permutations of the data; the
        # iteration budget is cut into n_epochs checkpoint segments
        seg = -(-self.n_iterations // self.n_epochs)
        order = rng.permutation(n)
        pos = 0
        checkpoints, epoch_loss = [], []
        total, count = 0.0, 0
        for t in range(1, self.n_iterations + 1):
            if pos + self.batch_size > n and pos > 0:
                order = rng.permutation(n)
                pos = 0
            b = order[pos:pos + self.batch_size]
            pos += b.size
            next_max = w_tgt[pairs].sum(axis=-1).max(axis=1)
            y = reward[b] + discount[b] * next_max[s_next[b]]
            idx = phi[b]
            err = w[idx].sum(axis=-1) - y
            loss = 0.5 * float(err @ err) / b.size
            if not np.isfinite(loss):
                raise FitDivergedError(f"non-finite TD loss at step {t}; lower lr")
            total += loss
            count += 1
            grad = np.zeros_like(w)
            np.add.at(grad, idx, (err / b.size)[:, None])
            if self.optimizer == "adam":
                m1 = beta1 * m1 + (1 - beta1) * grad
                m2 = beta2 * m2 + (1 - beta2) * grad * grad
                w = w - self.lr * (m1 / (1 - beta1**t)) / (np.sqrt(m2 / (1 - beta2**t)) + eps)
            else:
                m1 = self.momentum * m1 - self.lr * grad
                w = w + m1
            w_tgt = (1.0 - self.tau) * w_tgt + self.tau * w
            if t % seg == 0 or t == self.n_iterations:
                if not np.all(np.isfinite(w)):
                    raise FitDivergedError("weights became non-finite; lower lr")
                checkpoints.append(w.copy())
                epoch_loss.append(total / count)
                total, count = 0.0, 0
        k = max(1, min(self.average_last_epochs or 1, len(checkpoints)))
        self.coef_ = np.mean(checkpoints[-k:], axis=0)
        self.feature_map_ = fmap
        self.epoch_loss_ = epoch_loss
        self.n_steps_ = self.n_iterations
        return self

    def _raw_table(self) -> np.ndarray:
        check_is_fitted(self, "coef_")
        return self.coef_[self.feature_map_.all_pairs()].sum(axis=-1)

    def q_table(self) -> QTable:
        q = self._raw_table()
        if self.value_kind is ValueKind.SURVIVAL:
            q = np.clip(q, 0.0, 1.0)
        return QTable(q, self.value_kind)

    def predict(self, X) -> np.ndarray:
        """Q value for each ``(state, action)`` row of ``X``."""
        X = np.asarray(X, dtype=np.int64)
        return self.q_table().values[X[:, 0], X[:, 1]]

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {"schema": MODEL_SCHEMA, "value_kind": self.value_kind.value,
                "params": self.get_params(), "feature_map": self.feature_map_.to_dict(),
                "coef": self.coef_.tolist(), "epoch_loss": list(self.epoch_loss_)}

    @classmethod
    def from_dict(cls, doc: dict):
        check_schema(doc, MODEL_SCHEMA)
        kind = ValueKind(doc["value_kind"])
        klass = SurvivalQRegressor if kind is ValueKind.SURVIVAL else ReturnQRegressor
        if cls is not _LinearTDQ and klass is not cls:
            raise ValueError(f"document holds a {kind.value} model")
        est = klass(**doc["params"])
        est.feature_map_ = FeatureMap.from_dict(doc["feature_map"])
        est.coef_ = np.asarray(doc["coef"], dtype=float)
        est.epoch_loss_ = list(doc["epoch_loss"])
        est.n_steps_ = None
        return est


def load_fitted_q(doc: dict):
    return _LinearTDQ.from_dict(doc)


class SurvivalQRegressor(_LinearTDQ):
    """Linear survival-Q model fitted from experience tuples (RL4S)."""

    value_kind = ValueKind.SURVIVAL

    def __init__(self, n_states=None, n_actions=None, feature_mode="tabular", batch_size=124,
                 lr=3e-4, tau=0.005, optimizer="adam", momentum=0.9, n_iterations=51932,
                 n_epochs=7, average_last_epochs=3, extra_gamma=1.0, random_state=0):
        super().__init__(n_states, n_actions, feature_mode, batch_size, lr, tau, optimizer,
                         momentum, n_iterations, n_epochs, average_last_epochs, random_state)
        self.extra_gamma = extra_gamma

    def fit(self, tuples: Sequence[ExperienceTuple] | dict):
        d = _tuple_arrays(tuples)
        keep = ~d["died"]
        rel = d["released"][keep]
        reward = rel.astype(float)
        discount = np.where(rel, 0.0, (1.0 - d["h"][keep]) * self.extra_gamma)
        return self._train(d["s"][keep], d["a"][keep], d["s_next"][keep], reward, discount)


class ReturnQRegressor(_LinearTDQ):
    """Linear Q model for terminal +/-1 rewards with uniform discount."""

    value_kind = ValueKind.RETURN

    def __init__(self, n_states=None, n_actions=None, feature_mode="tabular", batch_size=124,
                 lr=3e-4, tau=0.005, optimizer="adam", momentum=0.9, n_iterations=51932,
                 n_epochs=7, average_last_epochs=3, gamma=0.999, random_state=0):
        super().__init__(n_states, n_actions, feature_mode, batch_size, lr, tau, optimizer,
                         momentum, n_iterations, n_epochs, average_last_epochs, random_state)
        self.gamma = gamma

    def fit(self, transitions: dict):
        s = np.asarray(transitions["s"], dtype=np.int64)
        done = np.asarray(transitions["done"], dtype=bool)
        discount = np.where(done, 0.0, self.gamma)
        return self._train(s, np.asarray(transitions["a"], dtype=np.int64),
                           np.asarray(transitions["s_next"], dtype=np.int64),
                           np.asarray(transitions["reward"], dtype=float), discount)


def fit_hazard(dataset: TrajectoryDataset, config: RL4SConfig) -> HazardEstimator:
    X, y = build_training_set(dataset)
    return HazardEstimator(dataset.n_states, dataset.n_actions,
                           feature_mode=config.hazard_feature_mode,
                           positive_weight=config.hazard_positive_weight).fit(X, y)


def fit_rl4s(tuples, config: RL4SConfig, n_states: int | None = None,
             n_actions: int | None = None) -> SurvivalQRegressor:
    """Fitted survival-Q iteration on ``tuples`` with ``config``."""
    return SurvivalQRegressor(n_states, n_actions, extra_gamma=config.extra_gamma,
                              random_state=stage_seed(config.seed, STAGE_RL4S),
                              **config.estimator_params()).fit(tuples)


def fit_baseline(dataset: TrajectoryDataset, config: RL4SConfig) -> ReturnQRegressor:
    """Terminal-reward Q fitted on ``dataset`` with the same machinery."""
    tr = baseline_transitions(dataset, config.terminal_rewards)
    return ReturnQRegressor(dataset.n_states, dataset.n_actions, gamma=config.gamma,
                            random_state=stage_seed(config.seed, STAGE_BASELINE),
                            **config.estimator_params()).fit(tr)

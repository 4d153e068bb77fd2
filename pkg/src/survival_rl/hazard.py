"""Discrete-time hazard estimation from offline trajectories.

Every observed step from a transient state is one binary example: did the
patient die within that step? A logistic model over (state, action)
features then estimates h(s, a). Class imbalance is handled by importance
weighting the positive class.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import FeatureMap
from .io import check_schema
from .mdp import HazardMdp, Outcome, TrajectoryDataset

MODEL_SCHEMA = "hazard-model/1"
CLAMP = 1e-6
SOLVERS = ("newton", "momentum")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


def build_training_set(dataset: TrajectoryDataset) -> tuple[np.ndarray, np.ndarray]:
    """Labelled ``(state, action)`` examples, one per step from a transient state.

    The label is 1 only for the step that ends in death. Truncated episodes
    contribute their steps with label 0.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    X, y = [], []
    for ep in dataset:
        trans = ep.transitions
        for k, st in enumerate(trans):
            X.append((st.state, st.action))
            y.append(1 if ep.outcome is Outcome.DIED and k == len(trans) - 1 else 0)
    if not X:
        raise ValueError("dataset has no transient steps")
    return np.asarray(X, dtype=np.int64), np.asarray(y, dtype=np.int64)


class HazardEstimator(ClassifierMixin, BaseEstimator):
    """Logistic hazard model over (state, action) pairs.

    Parameters
    ----------
    n_states, n_actions : int
    feature_mode : {'tabular', 'onehot'}
        ``tabular`` fits one logit per pair (the saturated model);
        ``onehot`` is additive in state and action.
    positive_weight : float
        Importance weight of label-1 examples.
    solver : {'newton', 'momentum'}
        Damped Newton iterations, or full-batch gradient descent with
        momentum using ``lr`` and ``momentum``.
    n_iters : int
        Iteration cap.
    l2 : float
        Ridge penalty on the summed (not averaged) loss. The default only
        keeps logits finite for pairs that never see a death.
    """

    def __init__(self, n_states=None, n_actions=None, feature_mode="tabular",
                 positive_weight=1.0, solver="newton", lr=1.0, momentum=0.9,
                 n_iters=200, l2=1e-8, tol=1e-10):
        self.n_states = n_states
        self.n_actions = n_actions
        self.feature_mode = feature_mode
        self.positive_weight = positive_weight
        self.solver = solver
        self.lr = lr
        self.momentum = momentum
        self.n_iters = n_iters
        self.l2 = l2
        self.tol = tol

    def _feature_map(self, X) -> FeatureMap:
        S = self.n_states if self.n_states is not None else int(X[:, 0].max()) + 1
        A = self.n_actions if self.n_actions is not None else int(X[:, 1].max()) + 1
        return FeatureMap(self.feature_mode, S, A)

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=np.int64)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: state, action")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if not self.positive_weight > 0:
            raise ValueError("positive_weight must be positive")
        labels = np.unique(y)
        if not np.array_equal(labels, [0, 1]):
            raise ValueError("need at least one positive and one negative example "
                             f"with labels in {{0, 1}}, got {labels.tolist()}")
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        fmap = self._feature_map(X)
        keys = X[:, 0] * fmap.n_actions + X[:, 1]
        uniq, inv = np.unique(keys, return_inverse=True)
        pos = np.bincount(inv, weights=w * y * self.positive_weight, minlength=uniq.size)
        neg = np.bincount(inv, weights=w * (1 - y), minlength=uniq.size)
        idx = fmap.indices(uniq // fmap.n_actions, uniq % fmap.n_actions)
        design = fmap.dense(uniq // fmap.n_actions, uniq % fmap.n_actions)

        theta = np.zeros(fmap.n_features)
        if self.solver == "newton":
            theta, n_iter = self._newton(theta, design, pos, neg)
        else:
            theta, n_iter = self._momentum(theta, idx, pos, neg)
        self.coef_ = theta
        self.feature_map_ = fmap
        self.classes_ = np.array([0, 1])
        self.n_iter_ = n_iter
        self.final_loss_ = float(self._loss(theta, design @ theta, pos, neg) / (pos + neg).sum())
        return self

    def _loss(self, theta, z, pos, neg):
        return (pos * _softplus(-z) + neg * _softplus(z)).sum() + 0.5 * self.l2 * theta @ theta

    def _newton(self, theta, design, pos, neg):
        total = pos + neg
        z = design @ theta
        loss = self._loss(theta, z, pos, neg)
        for it in range(1, self.n_iters + 1):
            p = _sigmoid(z)
            grad = design.T @ (total * p - pos) + self.l2 * theta
            hess = (design.T * (total * p * (1 - p))) @ design + self.l2 * np.eye(theta.size)
            step = np.linalg.solve(hess, grad)
            t = 1.0
            while True:
                cand = theta - t * step
                cz = design @ cand
                cl = self._loss(cand, cz, pos, neg)
                if cl <= loss or t < 1e-10:
                    break
                t *= 0.5
            theta, z = cand, cz
            decrement = float(grad @ step)
            loss = cl
            if decrement < self.tol:
                return theta, it
        return theta, self.n_iters

    def _momentum(self, theta, idx, pos, neg):
        total = pos + neg
        scale = total.sum()
        vel = np.zeros_like(theta)
        for it in range(1, self.n_iters + 1):
            z = theta[idx].sum(axis=-1)
            g_z = (total * _sigmoid(z) - pos) / scale
            grad = np.zeros_like(theta)
            np.add.at(grad, idx, g_z[:, None])
            grad += self.l2 * theta / scale
            vel = self.momentum * vel - self.lr * grad
            theta = theta + vel
            if not np.all(np.isfinite(theta)):
                raise FloatingPointError("hazard fit diverged; reduce lr")
        return theta, self.n_iters

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.int64)
        return self.coef_[self.feature_map_.indices(X[:, 0], X[:, 1])].sum(axis=-1)

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def hazard_table(self) -> np.ndarray:
        """Predicted hazard for every (state, action) pair."""
        check_is_fitted(self, "coef_")
        return _sigmoid(self.coef_[self.feature_map_.all_pairs()].sum(axis=-1))

    def discount_table(self, mdp: HazardMdp | None = None) -> np.ndarray:
        """Clamped hazards, with death states forced to 1 and release to 0."""
        h = np.clip(self.hazard_table(), CLAMP, 1.0 - CLAMP)
        if mdp is not None:
            h[mdp.death_flag] = 1.0
            h[mdp.release_flag] = 0.0
        return h

    @classmethod
    def from_table(cls, hazard, **params) -> "HazardEstimator":
        """Tabular model that predicts ``hazard`` exactly (values clipped to (0, 1))."""
        hazard = np.asarray(hazard, dtype=float)
        S, A = hazard.shape
        est = cls(n_states=S, n_actions=A, feature_mode="tabular", **params)
        p = np.clip(hazard, 1e-300, 1.0 - 1e-16)
        est.coef_ = (np.log(p) - np.log1p(-p)).ravel()
        est.feature_map_ = FeatureMap("tabular", S, A)
        est.classes_ = np.array([0, 1])
        est.n_iter_ = 0
        est.final_loss_ = float("nan")
        return est

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {"schema": MODEL_SCHEMA, "params": self.get_params(),
                "feature_map": self.feature_map_.to_dict(), "coef": self.coef_.tolist(),
                "n_iter": self.n_iter_, "final_loss": self.final_loss_}

    @classmethod
    def from_dict(cls, doc: dict) -> "HazardEstimator":
        check_schema(doc, MODEL_SCHEMA)
        est = cls(**doc["params"])
        est.feature_map_ = FeatureMap.from_dict(doc["feature_map"])
        est.coef_ = np.asarray(doc["coef"], dtype=float)
        est.classes_ = np.array([0, 1])
        est.n_iter_ = doc["n_iter"]
        est.final_loss_ = doc["final_loss"]
        return est


def empirical_hazard(X, y, n_states: int, n_actions: int,
                     positive_weight: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form weighted MLE of the saturated model, and visit counts.

    Unvisited pairs get NaN.
    """
    X = np.asarray(X, dtype=np.int64)
    y = np.asarray(y)
    keys = X[:, 0] * n_actions + X[:, 1]
    n = np.bincount(keys, minlength=n_states * n_actions).astype(float)
    k = np.bincount(keys, weights=y, minlength=n_states * n_actions)
    wk = positive_weight * k
    with np.errstate(invalid="ignore", divide="ignore"):
        h = wk / (wk + n - k)
    return h.reshape(n_states, n_actions), n.reshape(n_states, n_actions)


def calibration_curve(p_pred, y, n_bins: int = 10) -> list[dict]:
    """Equal-width bins on predicted probability; empty bins are omitted."""
    p_pred = np.asarray(p_pred, dtype=float)
    y = np.asarray(y, dtype=float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    which = np.clip(np.digitize(p_pred, edges[1:-1]), 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        m = which == b
        if m.any():
            out.append({"bin": b, "lower": float(edges[b]), "upper": float(edges[b + 1]),
                        "mean_predicted": float(p_pred[m].mean()),
                        "fraction_positive": float(y[m].mean()), "count": int(m.sum())})
    return out


def calibration_slope(curve: list[dict]) -> float:
    """Count-weighted least-squares slope of observed on predicted frequency."""
    if len(curve) < 2:
        return float("nan")
    x = np.array([c["mean_predicted"] for c in curve])
    yv = np.array([c["fraction_positive"] for c in curve])
    w = np.array([c["count"] for c in curve], dtype=float)
    xm = np.average(x, weights=w)
    ym = np.average(yv, weights=w)
    var = np.sum(w * (x - xm) ** 2)
    return float(np.sum(w * (x - xm) * (yv - ym)) / var) if var > 0 else float("nan")


def evaluate(model: HazardEstimator, X=None, y=None, mdp: HazardMdp | None = None,
             min_visits: int = 0, n_bins: int = 10) -> dict:
    """Log-loss and calibration on ``(X, y)``; error against true hazards given ``mdp``.

    The hazard errors cover transient pairs, restricted to pairs with at
    least ``min_visits`` occurrences in ``X`` when both are supplied.
    """
    out: dict = {}
    if X is not None and y is not None:
        X = np.asarray(X, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        p = model.predict_proba(X)[:, 1]
        pc = np.clip(p, 1e-15, 1 - 1e-15)
        out["n_examples"] = int(len(y))
        out["log_loss"] = float(-np.mean(y * np.log(pc) + (1 - y) * np.log1p(-pc)))
        curve = calibration_curve(p, y, n_bins)
        out["calibration"] = curve
        out["calibration_slope"] = calibration_slope(curve)
    if mdp is not None:
        mask = np.zeros((mdp.n_states, mdp.n_actions), dtype=bool)
        mask[mdp.transient_states] = True
        if X is not None and min_visits > 0:
            counts = np.zeros_like(mask, dtype=np.int64)
            np.add.at(counts, (X[:, 0], X[:, 1]), 1)
            mask &= counts >= min_visits
        err = np.abs(model.hazard_table() - mdp.hazard)[mask]
        out["n_pairs"] = int(mask.sum())
        out["sup_error"] = float(err.max()) if err.size else math.nan
        out["mean_abs_error"] = float(err.mean()) if err.size else math.nan
    return out

"""Binary (state, action) feature maps for the linear models.

Features are represented by the indices of their active (value 1)
coordinates, so a linear prediction is a gather-and-sum over weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("tabular", "onehot")


@dataclass(frozen=True)
class FeatureMap:
    """``tabular``: one weight per (s, a). ``onehot``: state ⊕ action ⊕ bias."""

    mode: str
    n_states: int
    n_actions: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"feature mode must be one of {MODES}, got {self.mode!r}")
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")

    @property
    def n_features(self) -> int:
        if self.mode == "tabular":
            return self.n_states * self.n_actions
        return self.n_states + self.n_actions + 1

    def indices(self, states, actions) -> np.ndarray:
        s = np.asarray(states, dtype=np.int64)
        a = np.asarray(actions, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.n_states):
            raise ValueError("state index out of range")
        if a.size and (a.min() < 0 or a.max() >= self.n_actions):
            raise ValueError("action index out of range")
        if self.mode == "tabular":
            return (s * self.n_actions + a)[..., None]
        bias = np.full_like(s, self.n_states + self.n_actions)
        return np.stack(np.broadcast_arrays(s, self.n_states + a, bias), axis=-1)

    def dense(self, states, actions) -> np.ndarray:
        idx = self.indices(states, actions)
        idx = idx.reshape(-1, idx.shape[-1])
        out = np.zeros((idx.shape[0], self.n_features))
        np.put_along_axis(out, idx, 1.0, axis=1)
        return out

    def all_pairs(self) -> np.ndarray:
        """Index array of shape (n_states, n_actions, k) covering every pair."""
        s, a = np.meshgrid(np.arange(self.n_states), np.arange(self.n_actions), indexing="ij")
        return self.indices(s, a)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "n_states": self.n_states, "n_actions": self.n_actions}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureMap":
        return cls(doc["mode"], int(doc["n_states"]), int(doc["n_actions"]))


def linear_predict(weights: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return weights[idx].sum(axis=-1)

"""Shared fit/score contract for every classifier."""

from __future__ import annotations

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def as_batch(X, flatten: bool = True) -> np.ndarray:
    """Accept one matrix or a batch; classical models see flattened rows."""
    X = np.asarray(X, dtype=np.float64)
    if flatten:
        if X.ndim == 1:
            return X[None, :]
        if X.ndim == 2:
            return X
        return X.reshape(len(X), -1)
    return X


class Classifier:
    """Binary classifier scoring malicious-ness in [0, 1].

    Subclasses implement ``fit`` and ``score``; ``state``/``from_state`` expose
    hyperparameters plus numpy arrays for serialization.
    """

    kind = "base"

    def fit(self, X, y, X_val=None, y_val=None):
        raise NotImplementedError

    def score(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return (self.score(X) >= 0.5).astype(np.int64)

    def hyperparams(self) -> dict:
        raise NotImplementedError

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @classmethod
    def from_state(cls, hyperparams: dict, arrays: dict[str, np.ndarray]):
        raise NotImplementedError


def check_training(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = as_batch(X)
    y = np.asarray(y, dtype=np.int64).ravel()
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (benign) or 1 (infected)")
    return X, y

from __future__ import annotations

import numpy as np

from .base import Classifier, as_batch, check_training


class GaussianNaiveBayes(Classifier):
    kind = "gnb"

    def __init__(self, var_smoothing: float = 1e-9):
        self.var_smoothing = var_smoothing

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training(X, y)
        if len(np.unique(y)) < 2:
            raise ValueError("Gaussian naive Bayes needs both classes in training data")
        eps = self.var_smoothing * X.var(axis=0).max()
        if eps <= 0:
            eps = self.var_smoothing
        self.theta_ = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
        self.var_ = np.stack([X[y == c].var(axis=0) for c in (0, 1)]) + eps
        self.log_prior_ = np.log(np.array([(y == 0).mean(), (y == 1).mean()]))
        return self

    def joint_log_likelihood(self, X) -> np.ndarray:
        X = as_batch(X)
        out = np.empty((len(X), 2))
        for c in (0, 1):
            norm = -0.5 * np.sum(np.log(2.0 * np.pi * self.var_[c]))
            out[:, c] = self.log_prior_[c] + norm - 0.5 * np.sum((X - self.theta_[c]) ** 2 / self.var_[c], axis=1)
        return out

    def log_posterior(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        top = jll.max(axis=1, keepdims=True)
        evidence = top + np.log(np.exp(jll - top).sum(axis=1, keepdims=True))
        return jll - evidence

    def score(self, X) -> np.ndarray:
        return np.exp(self.log_posterior(X)[:, 1])

    def hyperparams(self):
        return {"var_smoothing": self.var_smoothing}

    def arrays(self):
        return {"theta": self.theta_, "var": self.var_, "log_prior": self.log_prior_}

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(float(hp["var_smoothing"]))
        m.theta_, m.var_, m.log_prior_ = arrays["theta"], arrays["var"], arrays["log_prior"]
        return m

from __future__ import annotations

import numpy as np

from .base import Classifier, as_batch, check_training


class KNearestNeighbors(Classifier):
    """Score = share of the k nearest training samples (Euclidean) that are infected.

    Candidates come from the fast ``|q|^2 + |x|^2 - 2 q.x`` expansion, widened by
    a rounding bound, then ranked by exactly computed squared distances with
    ties broken by training index.
    """

    kind = "knn"

    def __init__(self, k: int = 5, chunk: int = 256):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.chunk = chunk

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training(X, y)
        if self.k > len(X):
            raise ValueError(f"k={self.k} exceeds training size {len(X)}")
        self.X_, self.y_ = X.copy(), y.copy()
        self.sq_ = np.einsum("ij,ij->i", X, X)
        return self

    def neighbors(self, X) -> np.ndarray:
        Q = as_batch(X)
        out = np.empty((len(Q), self.k), dtype=np.int64)
        max_sq = self.sq_.max()
        for start in range(0, len(Q), self.chunk):
            q = Q[start:start + self.chunk]
            qsq = np.einsum("ij,ij->i", q, q)
            approx = qsq[:, None] + self.sq_[None, :] - 2.0 * (q @ self.X_.T)
            kth = np.partition(approx, self.k - 1, axis=1)[:, self.k - 1]
            tol = 1e-9 * (qsq + max_sq) + 1e-300
            for i in range(len(q)):
                cand = np.flatnonzero(approx[i] <= kth[i] + 2 * tol[i])
                d = np.sum((self.X_[cand] - q[i]) ** 2, axis=1)
                order = np.lexsort((cand, d))[: self.k]
                out[start + i] = cand[order]
        return out

    def score(self, X) -> np.ndarray:
        idx = self.neighbors(X)
        return self.y_[idx].mean(axis=1)

    def hyperparams(self):
        return {"k": self.k}

    def arrays(self):
        return {"X": self.X_, "y": self.y_}

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(k=int(hp["k"]))
        m.X_, m.y_ = arrays["X"], arrays["y"]
        m.sq_ = np.einsum("ij,ij->i", m.X_, m.X_)
        return m

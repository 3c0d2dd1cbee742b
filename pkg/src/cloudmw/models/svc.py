from __future__ import annotations

import numpy as np

from .base import Classifier, as_batch, check_training, sigmoid


class PegasosSVC(Classifier):
    """Linear SVM trained by Pegasos (hinge loss + L2, step 1/(lambda t)).

    With ``n_components > 0`` inputs first pass through random Fourier features
    approximating an RBF kernel. The bias is a weight on an extra constant
    feature equal to the largest training magnitude, so rescaling the inputs
    by c together with lambda by c**2 reproduces the same decisions.
    """

    kind = "svc"

    def __init__(self, lam: float = 1e-4, epochs: int = 20, n_components: int = 0,
                 gamma: float | str = "scale", project: bool = True, seed: int = 0):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.lam = lam
        self.epochs = epochs
        self.n_components = n_components
        self.gamma = gamma
        self.project = project
        self.seed = seed

    def _features(self, X):
        if self.n_components == 0:
            return X
        return np.sqrt(2.0 / self.n_components) * np.cos(X @ self.rff_w_ + self.rff_b_)

    def _augment(self, Phi):
        return np.hstack([Phi, np.full((len(Phi), 1), self.bias_scale_)])

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training(X, y)
        rng = np.random.default_rng(self.seed)
        d = X.shape[1]
        if self.n_components:
            if self.gamma == "scale":
                var = X.var()
                gamma = 1.0 / (d * var) if var > 0 else 1.0
            else:
                gamma = float(self.gamma)
            self.gamma_ = gamma
            self.rff_w_ = rng.normal(0.0, np.sqrt(2.0 * gamma), size=(d, self.n_components))
            self.rff_b_ = rng.uniform(0.0, 2.0 * np.pi, size=self.n_components)
        Phi = self._features(X)
        top = np.abs(Phi).max()
        self.bias_scale_ = float(top) if top > 0 else 1.0
        A = self._augment(Phi)
        sgn = np.where(y == 1, 1.0, -1.0)
        w = np.zeros(A.shape[1])
        radius = 1.0 / np.sqrt(self.lam)
        t = 0
        for _ in range(self.epochs):
            for i in rng.permutation(len(A)):
                t += 1
                eta = 1.0 / (self.lam * t)
                violated = sgn[i] * (w @ A[i]) < 1.0
                w *= 1.0 - eta * self.lam
                if violated:
                    w += (eta * sgn[i]) * A[i]
                if self.project:
                    norm = np.sqrt(w @ w)
                    if norm > radius:
                        w *= radius / norm
        self.w_ = w
        return self

    def decision_function(self, X):
        return self._augment(self._features(as_batch(X))) @ self.w_

    def score(self, X):
        return sigmoid(self.decision_function(X))

    def hyperparams(self):
        return {"lam": self.lam, "epochs": self.epochs, "n_components": self.n_components,
                "gamma": self.gamma, "project": self.project, "seed": self.seed}

    def arrays(self):
        out = {"w": self.w_, "bias_scale": np.array([self.bias_scale_])}
        if self.n_components:
            out.update(rff_w=self.rff_w_, rff_b=self.rff_b_)
        return out

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(**hp)
        m.w_ = arrays["w"]
        m.bias_scale_ = float(arrays["bias_scale"][0])
        if m.n_components:
            m.rff_w_, m.rff_b_ = arrays["rff_w"], arrays["rff_b"]
        return m

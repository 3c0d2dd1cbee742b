"""CART trees, random forests and gradient-boosted trees.

Trees are grown on presorted feature columns: each feature is argsorted once
per fit and node membership is a boolean mask, so a split search is a pair of
cumulative sums per candidate feature. Bootstrap resamples become integer
sample weights, which lets every tree of a forest share one presort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Classifier, as_batch, check_training, sigmoid


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, n, fa = rows[active], node[active], f[active]
            go_left = X[r, fa] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_arrays(self, prefix: str) -> dict:
        return {f"{prefix}feature": self.feature, f"{prefix}threshold": self.threshold,
                f"{prefix}left": self.left, f"{prefix}right": self.right, f"{prefix}value": self.value}

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str) -> "Tree":
        return cls(*(arrays[f"{prefix}{k}"] for k in ("feature", "threshold", "left", "right", "value")))

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


class Presorted:
    """Column argsort of the non-constant features of ``X``."""

    def __init__(self, X: np.ndarray):
        self.X = X
        lo, hi = X.min(axis=0), X.max(axis=0)
        self.usable = np.flatnonzero(hi > lo)
        self.order = np.argsort(X[:, self.usable], axis=0, kind="stable")
        self.n_features = X.shape[1]


def _grow(
    pre: Presorted,
    target: np.ndarray,
    weight: np.ndarray,
    criterion: str,
    max_depth: int,
    min_samples_leaf: int,
    max_features: int | None,
    rng: np.random.Generator | None,
) -> Tree:
    X = pre.X
    wt = weight.astype(np.float64)
    wt_t = wt * target
    wt_t2 = wt * target * target
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, weight > 0, 0)]
    while stack:
        node, mask, depth = stack.pop()
        W = wt[mask].sum()
        S = wt_t[mask].sum()
        value[node] = S / W
        if criterion == "gini":
            parent = 2.0 * S * (W - S) / W
            if S == 0 or S == W:
                continue
        else:
            parent = wt_t2[mask].sum() - S * S / W
        if depth >= max_depth or W < 2 * min_samples_leaf or parent <= 0:
            continue
        base = 0.0 if criterion == "gini" else wt_t2[mask].sum()
        split = _best_split(pre, mask, wt, wt_t, criterion, min_samples_leaf, max_features, rng, S, W, base)
        if split is None:
            continue
        f, thr, impurity = split
        if impurity >= parent - 1e-12 * max(1.0, abs(parent)):
            continue
        go_left = X[:, f] <= thr
        lm, rm = mask & go_left, mask & ~go_left
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, rm, depth + 1))
        stack.append((li, lm, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value))


def _best_split(pre, mask, wt, wt_t, criterion, min_leaf, max_features, rng, S, W, base):
    usable = pre.usable
    if max_features is None or max_features >= pre.n_features:
        cols = np.arange(len(usable))
    else:
        # draw from all features; constant ones can never split and are skipped
        drawn = rng.choice(pre.n_features, size=max_features, replace=False)
        cols = np.flatnonzero(np.isin(usable, drawn))
        if len(cols) == 0:
            return None
    order = pre.order[:, cols]
    member = mask[order]
    n_node = int(mask.sum())
    sel = order.T[member.T].reshape(len(cols), n_node)  # node rows, sorted per feature
    feats = usable[cols]
    xs = pre.X[sel, feats[:, None]]
    cw = np.cumsum(wt[sel], axis=1)[:, :-1]
    cs = np.cumsum(wt_t[sel], axis=1)[:, :-1]
    rw, rs = W - cw, S - cs
    valid = (xs[:, :-1] < xs[:, 1:]) & (cw >= min_leaf) & (rw >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        if criterion == "gini":
            imp = 2.0 * (cs * (cw - cs) / cw + rs * (rw - rs) / rw)
        else:
            imp = base - (cs * cs / cw + rs * rs / rw)
    imp = np.where(valid, imp, np.inf)
    flat = int(np.argmin(imp))
    j, i = divmod(flat, imp.shape[1])
    lo, hi = xs[j, i], xs[j, i + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr), float(imp[j, i])


class DecisionTree(Classifier):
    """Gini CART classifier; score is the infected share of the reached leaf."""

    kind = "tree"

    def __init__(self, max_depth: int = 16, min_samples_leaf: int = 2):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training(X, y)
        pre = Presorted(X)
        self.tree_ = _grow(pre, y.astype(np.float64), np.ones(len(y), dtype=np.int64), "gini",
                           self.max_depth, self.min_samples_leaf, None, None)
        return self

    def score(self, X):
        return self.tree_.predict_value(as_batch(X))

    def hyperparams(self):
        return {"max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf}

    def arrays(self):
        return self.tree_.to_arrays("")

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(int(hp["max_depth"]), int(hp["min_samples_leaf"]))
        m.tree_ = Tree.from_arrays(arrays, "")
        return m


class RandomForest(Classifier):
    """Bagged gini trees with random feature subsets; score = share of infected votes."""

    kind = "rf"

    def __init__(self, n_trees: int = 100, max_depth: int = 16, min_samples_leaf: int = 2,
                 max_features: int | str | None = "sqrt", bootstrap: bool = True, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed

    def _n_features(self, d: int) -> int | None:
        mf = self.max_features
        if mf is None or mf == "all":
            return None
        if mf == "sqrt":
            return max(1, int(math.sqrt(d)))
        return int(mf)

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training(X, y)
        pre = Presorted(X)
        m = self._n_features(X.shape[1])
        yf = y.astype(np.float64)
        self.trees_ = []
        for child in np.random.SeedSequence(self.seed).spawn(self.n_trees):
            rng = np.random.default_rng(child)
            if self.bootstrap:
                w = np.bincount(rng.integers(0, len(y), size=len(y)), minlength=len(y))
            else:
                w = np.ones(len(y), dtype=np.int64)
            self.trees_.append(_grow(pre, yf, w, "gini", self.max_depth, self.min_samples_leaf, m, rng))
        return self

    def score(self, X):
        X = as_batch(X)
        votes = np.zeros(len(X))
        for t in self.trees_:
            votes += t.predict_value(X) >= 0.5
        return votes / len(self.trees_)

    def hyperparams(self):
        return {"n_trees": self.n_trees, "max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
                "max_features": self.max_features, "bootstrap": self.bootstrap, "seed": self.seed}

    def arrays(self):
        out = {}
        for i, t in enumerate(self.trees_):
            out.update(t.to_arrays(f"t{i}_"))
        return out

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(**hp)
        m.trees_ = [Tree.from_arrays(arrays, f"t{i}_") for i in range(int(hp["n_trees"]))]
        return m


def logistic_loss(y: np.ndarray, F: np.ndarray) -> float:
    # log(1 + e^F) - y F, computed stably
    return float(np.mean(np.logaddexp(0.0, F) - y * F))


class GradientBoostedTrees(Classifier):
    """Stage-wise regression trees on the logistic-loss gradient.

    Leaves take a Newton step ``sum(residual) / sum(p (1 - p))``. A stage whose
    shrunken step would raise the training loss is halved until it does not,
    so the recorded loss curve never increases.
    """

    kind = "gbt"

    def __init__(self, n_stages: int = 100, learning_rate: float = 0.1, max_depth: int = 3,
                 min_samples_leaf: int = 1):
        self.n_stages = n_stages
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_training(X, y)
        yf = y.astype(np.float64)
        p0 = np.clip(yf.mean(), 1e-12, 1 - 1e-12)
        self.f0_ = float(np.log(p0 / (1 - p0)))
        F = np.full(len(y), self.f0_)
        pre = Presorted(X)
        ones = np.ones(len(y), dtype=np.int64)
        self.trees_, self.steps_ = [], []
        self.loss_curve_ = [logistic_loss(yf, F)]
        for _ in range(self.n_stages):
            p = sigmoid(F)
            resid = yf - p
            tree = _grow(pre, resid, ones, "mse", self.max_depth, self.min_samples_leaf, None, None)
            leaves = tree.apply(X)
            num = np.bincount(leaves, weights=resid, minlength=len(tree.value))
            den = np.bincount(leaves, weights=p * (1 - p), minlength=len(tree.value))
            tree.value = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
            step = self.learning_rate
            prev = self.loss_curve_[-1]
            for _ in range(60):
                cand = F + step * tree.value[leaves]
                loss = logistic_loss(yf, cand)
                if loss <= prev:
                    break
                step /= 2.0
            else:
                step, cand, loss = 0.0, F, prev
            F = cand
            self.trees_.append(tree)
            self.steps_.append(step)
            self.loss_curve_.append(loss)
        return self

    def decision_function(self, X):
        X = as_batch(X)
        F = np.full(len(X), self.f0_)
        for t, s in zip(self.trees_, self.steps_):
            F = F + s * t.predict_value(X)
        return F

    def score(self, X):
        return sigmoid(self.decision_function(X))

    def hyperparams(self):
        return {"n_stages": self.n_stages, "learning_rate": self.learning_rate, "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf}

    def arrays(self):
        out = {"f0": np.array([self.f0_]), "steps": np.array(self.steps_), "loss_curve": np.array(self.loss_curve_)}
        for i, t in enumerate(self.trees_):
            out.update(t.to_arrays(f"t{i}_"))
        return out

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(**hp)
        m.f0_ = float(arrays["f0"][0])
        m.steps_ = [float(s) for s in arrays["steps"]]
        m.loss_curve_ = [float(v) for v in arrays["loss_curve"]]
        m.trees_ = [Tree.from_arrays(arrays, f"t{i}_") for i in range(len(m.steps_))]
        return m

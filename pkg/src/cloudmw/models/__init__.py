"""Classifier families behind one fit/score contract."""

from .base import Classifier, sigmoid
from .cnn import CnnConfig, DenseCNN, DenseNet, cnn_backward, cnn_forward, early_stop, select_best
from .gnb import GaussianNaiveBayes
from .knn import KNearestNeighbors
from .svc import PegasosSVC
from .trees import DecisionTree, GradientBoostedTrees, RandomForest

MODEL_KINDS = {
    "cnn": DenseCNN,
    "svc": PegasosSVC,
    "rf": RandomForest,
    "knn": KNearestNeighbors,
    "gbt": GradientBoostedTrees,
    "gnb": GaussianNaiveBayes,
    "tree": DecisionTree,
}

# the six families compared in reports, in table order
DEFAULT_MODELS = ("cnn", "svc", "rf", "knn", "gbt", "gnb")

DISPLAY_NAMES = {"cnn": "CNN", "svc": "SVC", "rf": "RFC", "knn": "KNN", "gbt": "GBC", "gnb": "GNB", "tree": "Tree"}


def make_model(kind: str, **hyperparams) -> Classifier:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(**hyperparams)


__all__ = [
    "Classifier", "CnnConfig", "DEFAULT_MODELS", "DISPLAY_NAMES", "DecisionTree", "DenseCNN", "DenseNet",
    "GaussianNaiveBayes", "GradientBoostedTrees", "KNearestNeighbors", "MODEL_KINDS", "PegasosSVC",
    "RandomForest", "cnn_backward", "cnn_forward", "early_stop", "make_model", "select_best", "sigmoid",
]

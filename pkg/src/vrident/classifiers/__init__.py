"""Window classifiers and the soft-voting ensemble built from them."""
from __future__ import annotations

from .base import Classifier, check_matrix
from .boosting import GradientBoosting
from .ensemble import SoftVotingEnsemble
from .gaussian import QuadraticDiscriminant
from .logistic import LogisticOneVsRest
from .serialize import MODEL_FORMAT_VERSION, load_model, save_model
from .trees import ExtraTrees, FlatTree, RandomForest

MODEL_KINDS = ("logistic", "qda", "random_forest", "extra_trees", "gbm", "ensemble")

_REGISTRY = {
    "logistic": LogisticOneVsRest,
    "qda": QuadraticDiscriminant,
    "random_forest": RandomForest,
    "extra_trees": ExtraTrees,
    "gbm": GradientBoosting,
}


def make_model(kind: str, seed: int = 0, **params):
    """Build an unfitted model by kind name.

    "ensemble" assembles one of each other kind sharing the seed unless
    ``members`` passes an explicit list. Extra keyword arguments go to the
    model constructor.
    """
    if kind == "ensemble":
        members = params.pop("members", None)
        if params:
            raise ValueError(f"unknown ensemble parameters: {sorted(params)}")
        if members is None:
            members = [make_model(k, seed=seed) for k in MODEL_KINDS if k != "ensemble"]
        return SoftVotingEnsemble(members)
    if kind not in _REGISTRY:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return _REGISTRY[kind](seed=seed, **params)


__all__ = [
    "Classifier",
    "check_matrix",
    "ExtraTrees",
    "FlatTree",
    "GradientBoosting",
    "LogisticOneVsRest",
    "MODEL_FORMAT_VERSION",
    "MODEL_KINDS",
    "QuadraticDiscriminant",
    "RandomForest",
    "SoftVotingEnsemble",
    "load_model",
    "make_model",
    "save_model",
]

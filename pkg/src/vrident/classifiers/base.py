"""Shared classifier plumbing: label encoding, validation, prediction."""
from __future__ import annotations

import numpy as np


def check_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


class Classifier:
    """Base for all models: fit(X, y) freezes a sorted label order, predict
    is the row-wise argmax of predict_proba (numpy argmax keeps the lowest
    index on ties). Subclasses implement _fit(X, y_idx) and _proba(X)."""

    kind = "base"

    def __init__(self, seed: int = 0) -> None:
        self.seed = int(seed)
        self.labels_: np.ndarray | None = None
        self.n_features_: int | None = None

    def fit(self, X, y) -> "Classifier":
        X = check_matrix(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        self.labels_ = np.unique(y)
        if self.labels_.shape[0] < 2:
            raise ValueError(f"training needs >= 2 distinct labels, got {self.labels_.shape[0]}")
        self.n_features_ = X.shape[1]
        y_idx = np.searchsorted(self.labels_, y)
        self._fit(X, y_idx.astype(np.int64))
        return self

    def _fit(self, X: np.ndarray, y_idx: np.ndarray) -> None:
        raise NotImplementedError

    def _proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, X) -> np.ndarray:
        if self.labels_ is None:
            raise ValueError(f"{self.kind} model is not fitted")
        X = check_matrix(X, self.n_features_)
        return self._proba(X)

    def predict(self, X) -> np.ndarray:
        return self.labels_[np.argmax(self.predict_proba(X), axis=1)]

    def metadata(self) -> dict:
        info = {
            "kind": self.kind,
            "seed": self.seed,
            "n_labels": None if self.labels_ is None else int(self.labels_.shape[0]),
            "n_features": self.n_features_,
        }
        info.update(self._metadata())
        return info

    def _metadata(self) -> dict:
        return {}

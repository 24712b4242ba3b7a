"""Quadratic discriminant analysis with diagonal covariance loading."""
from __future__ import annotations

import math

import numpy as np

from .base import Classifier


class QuadraticDiscriminant(Classifier):
    """Per-user Gaussian fit: mean plus covariance loaded with
    ridge*(trace/d) on the diagonal so 511-feature covariances estimated
    from a few dozen windows stay invertible. Priors are uniform; posterior
    probabilities come from the class log-densities through a log-sum-exp.
    """

    kind = "qda"

    def __init__(self, ridge: float = 1e-6, seed: int = 0) -> None:
        super().__init__(seed)
        if ridge <= 0:
            raise ValueError(f"ridge must be positive, got {ridge}")
        self.ridge = float(ridge)
        self.means_: np.ndarray | None = None  # (k, d)
        self.precisions_: np.ndarray | None = None  # (k, d, d)
        self.logdets_: np.ndarray | None = None  # (k,)

    def _fit(self, X: np.ndarray, y_idx: np.ndarray) -> None:
        k = self.labels_.shape[0]
        d = X.shape[1]
        self.means_ = np.zeros((k, d))
        self.precisions_ = np.zeros((k, d, d))
        self.logdets_ = np.zeros(k)
        for c in range(k):
            rows = X[y_idx == c]
            if rows.shape[0] < 2:
                raise ValueError(
                    f"user {self.labels_[c]!r} has {rows.shape[0]} training window(s); "
                    "QDA needs at least 2"
                )
            mu = rows.mean(axis=0)
            centered = rows - mu
            cov = centered.T @ centered / rows.shape[0]
            tr = float(np.trace(cov))
            alpha = self.ridge * (tr / d) if tr > 0 else self.ridge
            cov[np.diag_indices(d)] += alpha
            sign, logdet = np.linalg.slogdet(cov)
            if sign <= 0:
                raise ValueError(
                    f"covariance for user {self.labels_[c]!r} is not positive definite"
                )
            self.means_[c] = mu
            self.precisions_[c] = np.linalg.inv(cov)
            self.logdets_[c] = logdet

    def log_densities(self, X) -> np.ndarray:
        """Per-class Gaussian log-density of each row, shape (n, k)."""
        if self.means_ is None:
            raise ValueError("qda model is not fitted")
        X = np.asarray(X, dtype=np.float64)
        d = X.shape[1]
        out = np.empty((X.shape[0], self.means_.shape[0]))
        for c in range(self.means_.shape[0]):
            diff = X - self.means_[c]
            quad = np.einsum("ij,jk,ik->i", diff, self.precisions_[c], diff)
            out[:, c] = -0.5 * (d * math.log(2.0 * math.pi) + self.logdets_[c] + quad)
        return out

    def _proba(self, X: np.ndarray) -> np.ndarray:
        # uniform prior adds a constant, which log-sum-exp cancels
        ll = self.log_densities(X)
        shifted = ll - ll.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def _metadata(self) -> dict:
        return {"ridge": self.ridge}

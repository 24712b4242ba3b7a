"""Multiclass gradient boosting on the softmax log-loss.

Per round one regression tree per user is fitted to that class's residual
(one-hot minus softmax). Trees grow leaf-wise (best first) up to max_leaves
with at least min_leaf samples per side; both the split gain and the leaf
values are second-order (Newton) estimates:

    gain = G_L^2/(H_L+eps) + G_R^2/(H_R+eps) - G^2/(H+eps),  value = -G/(H+eps)

with G/H the summed gradients p - y and hessians p(1-p). Scores start at
zero (uniform probabilities), and each accepted tree moves them by
learning_rate * leaf value.
"""
from __future__ import annotations

import heapq

import numpy as np

from .base import Classifier
from .trees import FlatTree, _TreeBuffers

_EPS = 1e-16


def _softmax(F: np.ndarray) -> np.ndarray:
    z = F - F.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_loss(F: np.ndarray, y_idx: np.ndarray) -> float:
    z = F - F.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1)) + F.max(axis=1)
    return float(np.mean(lse - F[np.arange(F.shape[0]), y_idx]))


def _best_reg_split(Xn, g, h, min_leaf):
    """Best Newton-gain split over all features, or None when no boundary
    clears min_leaf on both sides with positive gain."""
    n = Xn.shape[0]
    if n < 2 * min_leaf:
        return None
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    gl = np.cumsum(g[order], axis=0)[:-1]
    hl = np.cumsum(h[order], axis=0)[:-1]
    g_tot = g.sum()
    h_tot = h.sum()
    gr = g_tot - gl
    hr = h_tot - hl
    gain = gl**2 / (hl + _EPS) + gr**2 / (hr + _EPS) - g_tot**2 / (h_tot + _EPS)
    n_left = np.arange(1, n)[:, None]
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & ((n - n_left) >= min_leaf)
    gain[~valid] = -np.inf
    best = gain.max()
    if not (best > 0):
        return None
    cand = np.argwhere(gain == best)
    boundary, feat = cand[np.lexsort((cand[:, 0], cand[:, 1]))][0]
    thr = 0.5 * (xs[boundary, feat] + xs[boundary + 1, feat])
    return float(best), int(feat), float(thr)


def _grow_regression_tree(X, g, h, max_leaves, min_leaf) -> FlatTree:
    buf = _TreeBuffers()
    root = buf.alloc()
    counter = 0
    heap = []

    def push(nid, idx):
        nonlocal counter
        split = _best_reg_split(X[idx], g[idx], h[idx], min_leaf)
        if split is not None:
            gain, feat, thr = split
            heapq.heappush(heap, (-gain, counter, nid, idx, feat, thr))
            counter += 1

    all_idx = np.arange(X.shape[0])
    leaves = {root: all_idx}
    push(root, all_idx)
    while heap and len(leaves) < max_leaves:
        _, _, nid, idx, feat, thr = heapq.heappop(heap)
        mask = X[idx, feat] <= thr
        buf.feature[nid] = feat
        buf.threshold[nid] = thr
        lid = buf.alloc()
        rid = buf.alloc()
        buf.left[nid] = lid
        buf.right[nid] = rid
        del leaves[nid]
        for child, cidx in ((lid, idx[mask]), (rid, idx[~mask])):
            leaves[child] = cidx
            push(child, cidx)
    for nid, idx in leaves.items():
        buf.value[nid] = -g[idx].sum() / (h[idx].sum() + _EPS)
    return buf.pack(1)


class GradientBoosting(Classifier):
    kind = "gbm"

    def __init__(
        self,
        n_rounds: int = 100,
        learning_rate: float = 0.1,
        max_leaves: int = 31,
        min_leaf: int = 5,
        seed: int = 0,
    ) -> None:
        super().__init__(seed)
        if n_rounds < 0:
            raise ValueError(f"n_rounds must be >= 0, got {n_rounds}")
        if not 0 < learning_rate <= 1:
            raise ValueError(f"learning_rate must be in (0, 1], got {learning_rate}")
        if max_leaves < 2:
            raise ValueError(f"max_leaves must be >= 2, got {max_leaves}")
        self.n_rounds = int(n_rounds)
        self.learning_rate = float(learning_rate)
        self.max_leaves = int(max_leaves)
        self.min_leaf = int(min_leaf)
        self.trees_: list[list[FlatTree]] = []  # [round][class]
        self.train_loss_: list[float] = []

    def _fit(self, X: np.ndarray, y_idx: np.ndarray) -> None:
        n = X.shape[0]
        k = self.labels_.shape[0]
        onehot = np.zeros((n, k))
        onehot[np.arange(n), y_idx] = 1.0
        F = np.zeros((n, k))
        self.trees_ = []
        self.train_loss_ = [_log_loss(F, y_idx)]
        for _ in range(self.n_rounds):
            P = _softmax(F)
            grad = P - onehot
            hess = P * (1.0 - P)
            round_trees = []
            for c in range(k):
                tree = _grow_regression_tree(
                    X, grad[:, c], hess[:, c], self.max_leaves, self.min_leaf
                )
                round_trees.append(tree)
                F[:, c] += self.learning_rate * tree.value[tree.apply(X), 0]
            self.trees_.append(round_trees)
            self.train_loss_.append(_log_loss(F, y_idx))

    def decision_scores(self, X) -> np.ndarray:
        """Accumulated boosting scores before the softmax, shape (n, k)."""
        if self.labels_ is None:
            raise ValueError("gbm model is not fitted")
        X = np.asarray(X, dtype=np.float64)
        F = np.zeros((X.shape[0], self.labels_.shape[0]))
        for round_trees in self.trees_:
            for c, tree in enumerate(round_trees):
                F[:, c] += self.learning_rate * tree.value[tree.apply(X), 0]
        return F

    def _proba(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self.decision_scores(X))

    def _metadata(self) -> dict:
        return {
            "n_rounds": self.n_rounds,
            "learning_rate": self.learning_rate,
            "max_leaves": self.max_leaves,
            "min_leaf": self.min_leaf,
            "train_loss": list(self.train_loss_),
        }

"""Popularity and cosine nearest-neighbour recommenders."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .base import Recommender, top_k_per_row


class TopPop(Recommender):
    """Score = number of distinct users who rated the item."""

    allow_empty = True

    def fit(self, store):
        store = self._check_fit(store)
        self.pop_ = np.bincount(store.matrix.indices, minlength=store.n_items).astype(np.float64)
        return self

    def _score_rows(self, users):
        return np.broadcast_to(self.pop_, (len(users), self.n_items_))


def _shrunk_cosine_block(gram_block: np.ndarray, norms_rows, norms_cols, shrink: float) -> np.ndarray:
    denom = np.outer(norms_rows, norms_cols) + shrink
    return np.divide(gram_block, denom, out=np.zeros_like(gram_block), where=denom > 0)


class ItemKNN(Recommender):
    """Item-item cosine on rating vectors with additive shrinkage.

    ``similarity_[i, j]`` is the weight of item ``i`` when scoring ``j``;
    each column keeps its ``top_k`` largest weights and the diagonal is 0.
    """

    def __init__(self, top_k: int | None = 100, shrink: float = 0.0):
        self.top_k = top_k
        self.shrink = shrink

    def fit(self, store):
        store = self._check_fit(store)
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.shrink < 0:
            raise ValueError("shrink must be >= 0")
        self.similarity_ = item_cosine(store.matrix, self.shrink, self.top_k)
        return self

    def _score_rows(self, users):
        return np.asarray((self._user_rows(users) @ self.similarity_).todense())


def item_cosine(X: sp.csr_matrix, shrink: float, top_k: int | None, block: int = 1024) -> sp.csr_matrix:
    Xc = sp.csc_matrix(X, dtype=np.float64)
    n_items = Xc.shape[1]
    norms = np.sqrt(np.asarray(Xc.multiply(Xc).sum(axis=0)).ravel())
    XT = Xc.T.tocsr()
    parts = []
    for lo in range(0, n_items, block):
        hi = min(lo + block, n_items)
        gram = np.asarray((XT @ Xc[:, lo:hi]).todense())  # (n_items, hi-lo)
        sim = _shrunk_cosine_block(gram, norms, norms[lo:hi], shrink)
        sim[np.arange(lo, hi), np.arange(hi - lo)] = 0.0
        # prune per column: rows of sim.T are target items
        parts.append(top_k_per_row(sim.T, top_k))
    return sp.vstack(parts).T.tocsr() if parts else sp.csr_matrix((n_items, n_items))


class UserKNN(Recommender):
    """User-user cosine; each user keeps its ``top_k`` most similar users."""

    def __init__(self, top_k: int | None = 100, shrink: float = 0.0):
        self.top_k = top_k
        self.shrink = shrink

    def fit(self, store):
        store = self._check_fit(store)
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.shrink < 0:
            raise ValueError("shrink must be >= 0")
        X = store.matrix
        self.norms_ = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
        self._XT = X.T.tocsr()
        return self

    def user_similarity(self, users) -> sp.csr_matrix:
        users = self._check_users(users)
        X = self.store_.matrix
        gram = np.asarray((X[users] @ self._XT).todense())
        sim = _shrunk_cosine_block(gram, self.norms_[users], self.norms_, self.shrink)
        sim[np.arange(len(users)), users] = 0.0
        return top_k_per_row(sim, self.top_k)

    def _score_rows(self, users):
        return np.asarray((self.user_similarity(users) @ self.store_.matrix).todense())

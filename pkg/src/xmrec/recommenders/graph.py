"""Random-walk recommenders: 3-step user-item-user-item transition probabilities."""
from __future__ import annotations

import numpy as np

from .base import Recommender, row_normalize, top_k_per_row


class P3alpha(Recommender):
    """Item-item model ``W = P_iu^a @ P_ui^a`` with optional per-row top-k pruning.

    Transition probabilities come from row-normalised ratings and are raised
    element-wise to ``alpha``. A user's scores are ``P_ui^a[u] @ W``; with
    ``alpha=1`` and no pruning they form a probability distribution.
    """

    def __init__(self, top_k: int | None = 100, alpha: float = 1.0):
        self.top_k = top_k
        self.alpha = alpha

    def _item_weights(self, store):
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and >= 0")
        X = store.matrix
        p_ui = row_normalize(X)
        p_iu = row_normalize(X.T)
        p_ui.data **= self.alpha
        p_iu.data **= self.alpha
        self.p_ui_ = p_ui
        return np.asarray((p_iu @ p_ui).todense())

    def fit(self, store):
        store = self._check_fit(store)
        self.similarity_ = top_k_per_row(self._item_weights(store), self.top_k)
        return self

    def _score_rows(self, users):
        return np.asarray((self.p_ui_[users] @ self.similarity_).todense())


class RP3beta(P3alpha):
    """P3alpha whose destination column ``j`` is divided by ``pop(j) ** beta``."""

    def __init__(self, top_k: int | None = 100, alpha: float = 1.0, beta: float = 0.5):
        super().__init__(top_k=top_k, alpha=alpha)
        self.beta = beta

    def fit(self, store):
        store = self._check_fit(store)
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be finite and >= 0")
        w = self._item_weights(store)
        pop = np.bincount(store.matrix.indices, minlength=store.n_items).astype(np.float64)
        penalty = np.power(pop, self.beta, out=np.ones_like(pop), where=pop > 0)
        w /= penalty[None, :]
        self.similarity_ = top_k_per_row(w, self.top_k)
        return self


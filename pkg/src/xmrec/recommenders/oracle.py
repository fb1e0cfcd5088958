"""Scores from a synthetic world's true factors (for checking the plumbing end to end)."""
from __future__ import annotations

import numpy as np

from .base import Recommender


class Oracle(Recommender):
    """Noise-free affinity ``u . v_i + b_i`` read from a ground-truth ``.npz``.

    Users or items the ground truth does not know score 0.
    """

    def __init__(self, truth_path: str = ""):
        self.truth_path = truth_path

    def fit(self, store):
        from ..synth import GroundTruth

        store = self._check_fit(store)
        truth = GroundTruth.load(self.truth_path)
        users = {t: k for k, t in enumerate(truth.user_tokens)}
        items = {t: k for k, t in enumerate(truth.item_tokens)}
        dim = truth.item_factors.shape[1]
        self.user_factors_ = np.zeros((store.n_users, dim))
        self.item_factors_ = np.zeros((store.n_items, dim))
        self.item_bias_ = np.zeros(store.n_items)
        for k, tok in enumerate(store.user_map):
            if tok in users:
                self.user_factors_[k] = truth.user_factors[users[tok]]
        for k, tok in enumerate(store.item_map):
            if tok in items:
                self.item_factors_[k] = truth.item_factors[items[tok]]
                self.item_bias_[k] = truth.item_bias[items[tok]]
        return self

    def _score_rows(self, users):
        return self.user_factors_[users] @ self.item_factors_.T + self.item_bias_

    def score_tokens(self, user_tokens, item_tokens) -> np.ndarray:
        """Scores by token, so items the training store never saw are not cold here."""
        from ..synth import GroundTruth

        truth = getattr(self, "_truth", None) or GroundTruth.load(self.truth_path)
        self._truth = truth
        users = {t: k for k, t in enumerate(truth.user_tokens)}
        items = {t: k for k, t in enumerate(truth.item_tokens)}
        u = np.array([users[t] for t in user_tokens])
        i = np.array([[items[t] for t in row] for row in item_tokens])
        return np.einsum("sd,sjd->sj", truth.user_factors[u], truth.item_factors[i]) + truth.item_bias[i]

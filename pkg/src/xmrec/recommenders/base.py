from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..io import InteractionStore


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap; ``residual`` is the last change."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3g})")
        self.residual = residual


def check_store(store, allow_empty: bool = False) -> InteractionStore:
    if not isinstance(store, InteractionStore):
        raise TypeError(f"expected an InteractionStore, got {type(store).__name__}")
    if not allow_empty and store.nnz == 0:
        raise ValueError("cannot fit on an empty store")
    return store


def row_normalize(m: sp.spmatrix) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    sums = np.asarray(m.sum(axis=1)).ravel()
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    return sp.diags(inv) @ m


def top_k_per_row(dense: np.ndarray, k: int | None) -> sp.csr_matrix:
    """Keep the ``k`` largest entries of each row (ties: lower column first)."""
    n_rows, n_cols = dense.shape
    if k is None or k >= n_cols:
        out = sp.csr_matrix(dense)
        out.eliminate_zeros()
        return out
    # stable descending order so ties resolve deterministically
    order = np.argsort(-dense, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n_rows), k)
    cols = order.ravel()
    vals = dense[rows, cols]
    out = sp.csr_matrix((vals, (rows, cols)), shape=dense.shape)
    out.eliminate_zeros()
    out.sort_indices()
    return out


class Recommender(BaseEstimator):
    """Common scoring machinery.

    Subclasses implement ``fit(store)`` and ``_score_rows(users)``, which
    returns a dense (len(users), n_items) score block for training users.
    """

    #: minimum catalogue/store requirement checked in ``fit``
    allow_empty = False
    block_size = 512

    def _check_fit(self, store) -> InteractionStore:
        store = check_store(store, allow_empty=self.allow_empty)
        self.store_ = store
        self.n_users_, self.n_items_ = store.n_users, store.n_items
        return store

    def _score_rows(self, users: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_users(self, users) -> np.ndarray:
        check_is_fitted(self, "store_")
        users = np.asarray(users, dtype=np.int64)
        bad = (users < 0) | (users >= self.n_users_)
        if bad.any():
            raise KeyError(f"unknown user index {int(users[bad][0])}")
        return users

    def score(self, user: int, items) -> np.ndarray:
        """Scores of ``items`` (dense indices) for one training user.

        Indices outside the model's item space (e.g. -1 for a token the
        dataset never saw) are cold and score exactly 0.
        """
        items = np.asarray(items, dtype=np.int64)
        if items.ndim != 1 or items.size == 0:
            raise ValueError("items must be a non-empty 1-d list")
        return self.score_slates([user], items[None, :])[0]

    def score_slates(self, users, items) -> np.ndarray:
        """Score a (n_slates, slate_size) matrix of item indices, one user per row."""
        users = self._check_users(users)
        items = np.asarray(items, dtype=np.int64)
        if items.ndim != 2 or items.shape[0] != users.shape[0]:
            raise ValueError("items must be (n_slates, slate_size) aligned with users")
        cold = (items < 0) | (items >= self.n_items_)
        safe = np.where(cold, 0, items)
        out = np.empty(items.shape, dtype=np.float64)
        for lo in range(0, len(users), self.block_size):
            hi = min(lo + self.block_size, len(users))
            block = self._score_rows(users[lo:hi])
            out[lo:hi] = np.take_along_axis(block, safe[lo:hi], axis=1)
        out[cold] = 0.0
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{type(self).__name__} produced non-finite scores")
        return out

    def _user_rows(self, users) -> sp.csr_matrix:
        return self.store_.matrix[users]

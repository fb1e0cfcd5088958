"""Matrix factorisation recommenders: PureSVD and implicit-feedback ALS."""
from __future__ import annotations

import numpy as np
import scipy.sparse.linalg
from numba import njit
from sklearn.utils import check_random_state

from .base import Recommender


class PureSVD(Recommender):
    """Truncated SVD ``X ~ U S V^T``; a user's scores are ``r_u V V^T``."""

    def __init__(self, factors: int = 50, random_state: int = 0):
        self.factors = factors
        self.random_state = random_state

    def fit(self, store):
        store = self._check_fit(store)
        f = int(self.factors)
        limit = min(store.n_users, store.n_items)
        if f < 1:
            raise ValueError("factors must be >= 1")
        if f > limit:
            raise ValueError(f"factors={f} exceeds min(n_users, n_items)={limit}")
        X = store.matrix.astype(np.float64)
        if f >= limit - 1 or limit <= 400:
            u, s, vt = np.linalg.svd(X.toarray(), full_matrices=False)
            u, s, vt = u[:, :f], s[:f], vt[:f]
        else:
            rng = check_random_state(self.random_state)
            v0 = rng.uniform(-1.0, 1.0, size=limit)
            u, s, vt = scipy.sparse.linalg.svds(X, k=f, v0=v0)
            order = np.argsort(-s, kind="stable")
            u, s, vt = u[:, order], s[order], vt[order]
        self.user_factors_ = u * s[None, :]
        self.item_factors_ = vt.T.copy()
        self.singular_values_ = s
        return self

    def reconstruct(self) -> np.ndarray:
        return self.user_factors_ @ self.item_factors_.T

    def _score_rows(self, users):
        v = self.item_factors_
        return np.asarray(self._user_rows(users) @ v) @ v.T


@njit(cache=True)
def _als_half(indptr, indices, data, other, reg, conf_alpha, out):
    """Exact least-squares update of every row of ``out`` given ``other``.

    Row ``u`` solves (Y^T Y + Y_u^T (C_u - I) Y_u + reg I) x = Y_u^T C_u p_u
    with c = 1 + conf_alpha * r and p = 1 on observed entries.
    """
    f = other.shape[1]
    yty = other.T @ other
    ident = np.eye(f) * reg
    for u in range(out.shape[0]):
        lo, hi = indptr[u], indptr[u + 1]
        if hi == lo:
            out[u] = 0.0
            continue
        yu = np.ascontiguousarray(other[indices[lo:hi]])
        c = 1.0 + conf_alpha * data[lo:hi]
        weighted = np.ascontiguousarray(yu.T * (c - 1.0))
        a = yty + weighted @ yu + ident
        rhs = yu.T @ c
        out[u] = np.linalg.solve(a, rhs)


class ALS(Recommender):
    """Implicit-feedback alternating least squares (confidence-weighted)."""

    def __init__(self, factors: int = 64, reg: float = 0.01, conf_alpha: float = 10.0,
                 iterations: int = 15, random_state: int = 0):
        self.factors = factors
        self.reg = reg
        self.conf_alpha = conf_alpha
        self.iterations = iterations
        self.random_state = random_state

    def fit(self, store):
        store = self._check_fit(store)
        f = int(self.factors)
        if f < 1:
            raise ValueError("factors must be >= 1")
        if self.reg < 0 or self.conf_alpha < 0:
            raise ValueError("reg and conf_alpha must be >= 0")
        X = store.matrix.astype(np.float64)
        XT = X.T.tocsr()
        rng = check_random_state(self.random_state)
        users = rng.normal(scale=0.01, size=(store.n_users, f))
        items = rng.normal(scale=0.01, size=(store.n_items, f))
        reg, alpha = float(self.reg), float(self.conf_alpha)
        self.objective_history_ = []
        for _ in range(int(self.iterations)):
            _als_half(X.indptr, X.indices, X.data, items, reg, alpha, users)
            _als_half(XT.indptr, XT.indices, XT.data, users, reg, alpha, items)
            self.objective_history_.append(als_objective(X, users, items, reg, alpha))
        self.user_factors_ = users
        self.item_factors_ = items
        return self

    def _score_rows(self, users):
        return self.user_factors_[users] @ self.item_factors_.T


def als_objective(X, users, items, reg, conf_alpha) -> float:
    """sum_{u,i} c_ui (p_ui - u.v)^2 + reg (|U|^2 + |V|^2) without densifying."""
    coo = X.tocoo()
    pred = np.einsum("ij,ij->i", users[coo.row], items[coo.col])
    c = 1.0 + conf_alpha * coo.data
    # all cells with c=1, p=0, then correct the observed ones
    total = float(np.sum((users.T @ users) * (items.T @ items)))
    total += float(np.sum(c * (1.0 - pred) ** 2 - pred ** 2))
    return total + reg * (float(np.sum(users ** 2)) + float(np.sum(items ** 2)))

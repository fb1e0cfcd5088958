"""Item-item regression models: EASE-R (closed form) and SLIM (elastic net)."""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numba import njit

from .base import ConvergenceError, Recommender


class EASE(Recommender):
    """Ridge item autoencoder with zero diagonal.

    ``B = I - P diag(1/diag(P))`` with ``P = (X^T X + lambda I)^-1``.
    """

    def __init__(self, lam: float = 500.0):
        self.lam = lam

    def fit(self, store):
        store = self._check_fit(store)
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise ValueError("lam must be > 0")
        X = store.matrix
        gram = np.asarray((X.T @ X).todense(), dtype=np.float64)
        gram[np.diag_indices_from(gram)] += self.lam
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        p = scipy.linalg.cho_solve(factor, np.eye(gram.shape[0]), check_finite=False)
        b = -p / np.diag(p)[None, :]
        b[np.diag_indices_from(b)] = 0.0
        self.weights_ = b
        return self

    def _score_rows(self, users):
        return np.asarray(self._user_rows(users) @ self.weights_)


@njit(cache=True)
def _slim_columns(gram, n_users, neighbours, nb_ptr, l1, l2, tol, max_iter, out_rows, out_vals, out_ptr):
    """Coordinate descent per target column on the Gram matrix.

    Minimises 1/(2n) ||x_j - X w||^2 + l1 |w|_1 + l2/2 |w|^2 with w >= 0 and
    w_j = 0, over the candidate neighbours of j only.
    Returns the worst final sweep change (negative if every column converged).
    """
    n_items = gram.shape[0]
    worst = -1.0
    nnz = 0
    for j in range(n_items):
        lo, hi = nb_ptr[j], nb_ptr[j + 1]
        m = hi - lo
        out_ptr[j] = nnz
        if m == 0:
            continue
        idx = neighbours[lo:hi]
        a = np.empty((m, m))
        b = np.empty(m)
        for p in range(m):
            b[p] = gram[idx[p], j] / n_users
            for q in range(m):
                a[p, q] = gram[idx[p], idx[q]] / n_users
        w = np.zeros(m)
        aw = np.zeros(m)  # a @ w
        delta = 0.0
        converged = False
        for _ in range(max_iter):
            delta = 0.0
            for p in range(m):
                rho = b[p] - aw[p] + a[p, p] * w[p]
                new = rho - l1
                if new < 0.0:
                    new = 0.0
                else:
                    new /= a[p, p] + l2
                d = new - w[p]
                if d != 0.0:
                    for q in range(m):
                        aw[q] += a[q, p] * d
                    w[p] = new
                    if abs(d) > delta:
                        delta = abs(d)
            if delta < tol:
                converged = True
                break
        if not converged and delta > worst:
            worst = delta
        for p in range(m):
            if w[p] > 0.0:
                out_rows[nnz] = idx[p]
                out_vals[nnz] = w[p]
                nnz += 1
    out_ptr[n_items] = nnz
    return worst


class SLIM(Recommender):
    """Sparse non-negative item-item regression solved column by column.

    Each column ``j`` regresses on the ``top_k`` items with the largest
    co-occurrence with ``j`` (all co-occurring items if ``top_k`` is None);
    items that never co-occur with ``j`` get zero weight at the optimum
    anyway because of the non-negativity constraint.
    """

    def __init__(self, l1: float = 1e-3, l2: float = 1e-3, top_k: int | None = 100,
                 max_iter: int = 100, tol: float = 1e-4):
        self.l1 = l1
        self.l2 = l2
        self.top_k = top_k
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, store):
        store = self._check_fit(store)
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("l1 and l2 must be >= 0")
        X = store.matrix
        gram = np.asarray((X.T @ X).todense(), dtype=np.float64)
        neighbours, ptr = _candidate_neighbours(gram, self.top_k)
        n_items = gram.shape[0]
        rows = np.empty(len(neighbours), dtype=np.int64)
        vals = np.empty(len(neighbours), dtype=np.float64)
        col_ptr = np.empty(n_items + 1, dtype=np.int64)
        worst = _slim_columns(gram, float(store.n_users), neighbours, ptr, float(self.l1),
                              float(self.l2), float(self.tol), int(self.max_iter), rows, vals, col_ptr)
        if worst >= 0:
            raise ConvergenceError(f"SLIM did not converge in {self.max_iter} sweeps", worst)
        nnz = col_ptr[-1]
        w = sp.csc_matrix((vals[:nnz], rows[:nnz], col_ptr), shape=(n_items, n_items))
        self.weights_ = w.tocsr()
        return self

    def _score_rows(self, users):
        return np.asarray((self._user_rows(users) @ self.weights_).todense())


def _candidate_neighbours(gram: np.ndarray, top_k: int | None):
    n = gram.shape[0]
    lists = []
    for j in range(n):
        col = gram[:, j].copy()
        col[j] = 0.0
        cand = np.flatnonzero(col > 0)
        if top_k is not None and cand.size > top_k:
            order = np.argsort(-col[cand], kind="stable")[:top_k]
            cand = np.sort(cand[order])
        lists.append(cand)
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(c) for c in lists])
    flat = np.concatenate(lists).astype(np.int64) if n else np.zeros(0, dtype=np.int64)
    return flat, ptr

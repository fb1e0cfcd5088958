"""Gradient-boosted regression trees trained on LambdaRank gradients for NDCG@k.

Trees are grown best-first on Newton statistics. Split candidates come from
per-feature quantile histograms (at most ``max_bins`` bins; features with
fewer distinct values are split exactly) or, with ``max_bins=None``, from an
exact greedy scan over presorted values. Leaves hold Newton values ``-G / (H + l2_leaf_reg)``; predictions sum the
leaf values of the first ``best_iteration_`` trees, scaled by the learning
rate. Missing values (NaN) follow a per-node learned direction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .metrics import grouped_ndcg

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


# --------------------------------------------------------------------------- gradients

@njit(cache=True)
def _sigmoid_neg(x):
    # 1 / (1 + exp(x)) without overflow
    if x >= 0:
        z = math.exp(-x)
        return z / (1.0 + z)
    return 1.0 / (1.0 + math.exp(x))


@njit(cache=True)
def _lambda_kernel(scores, labels, group_ptr, k, sigma, grad, hess):
    skipped = 0
    for g in range(len(group_ptr) - 1):
        lo, hi = group_ptr[g], group_ptr[g + 1]
        m = hi - lo
        n_pos = 0
        for p in range(lo, hi):
            if labels[p] > 0:
                n_pos += 1
        if n_pos == 0 or n_pos == m:
            skipped += 1
            continue
        order = np.argsort(-scores[lo:hi], kind="mergesort")
        disc = np.zeros(m)
        for r in range(min(m, k)):
            disc[order[r]] = 1.0 / math.log2(r + 2.0)
        idcg = 0.0
        for r in range(min(n_pos, k)):
            idcg += 1.0 / math.log2(r + 2.0)
        pos = np.empty(n_pos, dtype=np.int64)
        q = 0
        for a in range(m):
            if labels[lo + a] > 0:
                pos[q] = a
                q += 1
        for a in pos:
            la = labels[lo + a]
            for b in range(m):
                lb = labels[lo + b]
                if la <= lb:
                    continue
                w = abs((la - lb) * (disc[a] - disc[b])) / idcg
                if w == 0.0:
                    continue
                rho = _sigmoid_neg(sigma * (scores[lo + a] - scores[lo + b]))
                lam = sigma * rho * w
                h = sigma * sigma * rho * (1.0 - rho) * w
                grad[lo + a] -= lam
                grad[lo + b] += lam
                hess[lo + a] += h
                hess[lo + b] += h
    return skipped


def lambda_gradients(scores, labels, group_ptr, k: int = 10, sigma: float = 1.0):
    """LambdaRank first/second derivatives of the pairwise surrogate loss.

    For each pair (i, j) with ``label_i > label_j`` and current-ranking
    ``|dNDCG@k|`` swap weight ``w``: ``rho = 1 / (1 + exp(sigma (s_i - s_j)))``,
    ``grad_i -= sigma rho w``, ``grad_j += sigma rho w``, and both hessians get
    ``sigma^2 rho (1 - rho) w``. Groups without a positive are skipped.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.float64)
    group_ptr = np.ascontiguousarray(group_ptr, dtype=np.int64)
    grad = np.zeros_like(scores)
    hess = np.zeros_like(scores)
    skipped = _lambda_kernel(scores, labels, group_ptr, int(k), float(sigma), grad, hess)
    if skipped:
        logger.warning("%d groups without both relevant and non-relevant samples skipped", skipped)
    return grad, hess


def pairwise_surrogate_loss(scores, labels, group_ptr, weights) -> float:
    """sum over pairs of w_ij log(1 + exp(-sigma (s_i - s_j))) with sigma=1 and fixed weights.

    ``weights`` maps (group, a, b) local indices to the swap weight; used to
    check :func:`lambda_gradients` by finite differences.
    """
    total = 0.0
    for (g, a, b), w in weights.items():
        lo = group_ptr[g]
        total += w * np.logaddexp(0.0, -(scores[lo + a] - scores[lo + b]))
    return float(total)


# --------------------------------------------------------------------------- trees

@dataclass
class RegressionTree:
    """Flat binary tree; ``left[n] == -1`` marks a leaf whose output is ``value[n]``.

    Internal nodes send ``x <= threshold`` left and NaN per ``missing_left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.left), dtype=np.int64)
        for n in range(len(self.left)):
            if self.left[n] >= 0:
                depth[self.left[n]] = depth[n] + 1
                depth[self.right[n]] = depth[n] + 1
        return int(depth.max(initial=0))

    def split_features(self) -> list[int]:
        return [int(f) for f, l in zip(self.feature, self.left) if l >= 0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _route(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                      self.missing_left, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @classmethod
    def leaf(cls, value: float) -> "RegressionTree":
        return cls(np.array([-1]), np.array([0.0]), np.array([False]), np.array([-1]),
                   np.array([-1]), np.array([value]))

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float,
              missing_left: bool = True) -> "RegressionTree":
        return cls(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
                   np.array([missing_left, False, False]), np.array([1, -1, -1]),
                   np.array([2, -1, -1]), np.array([0.0, left_value, right_value]))


@njit(cache=True)
def _route(X, feature, threshold, missing_left, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        n = 0
        while left[n] >= 0:
            v = X[i, feature[n]]
            if np.isnan(v):
                n = left[n] if missing_left[n] else right[n]
            elif v <= threshold[n]:
                n = left[n]
            else:
                n = right[n]
        out[i] = n
    return out


@njit(cache=True)
def _presort(XT):
    """Per-feature sample order: ascending values, NaNs last (stable)."""
    n_feat, n = XT.shape
    order = np.empty((n_feat, n), dtype=np.int64)
    for f in range(n_feat):
        order[f] = np.argsort(XT[f], kind="mergesort")  # NaN sorts last
    return order


@njit(cache=True)
def _best_split(XT, g, h, order, feats, start, end, lam, min_leaf):
    """Best (gain, feature, threshold, missing_left) for the node segment [start, end)."""
    g_tot = 0.0
    h_tot = 0.0
    for p in range(start, end):
        i = order[0, p]
        g_tot += g[i]
        h_tot += h[i]
    parent = g_tot * g_tot / (h_tot + lam)
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    best_mleft = False
    m = end - start
    for fi in range(len(feats)):
        f = feats[fi]
        row = XT[f]
        # samples with missing values sit at the tail of the segment
        n_ok = m
        g_miss = 0.0
        h_miss = 0.0
        for p in range(end - 1, start - 1, -1):
            i = order[fi, p]
            if np.isnan(row[i]):
                n_ok -= 1
                g_miss += g[i]
                h_miss += h[i]
            else:
                break
        n_miss = m - n_ok
        gl = 0.0
        hl = 0.0
        for q in range(n_ok - 1):
            i = order[fi, start + q]
            gl += g[i]
            hl += h[i]
            v = row[i]
            v_next = row[order[fi, start + q + 1]]
            if v_next <= v:
                continue
            n_left = q + 1
            for mleft in (True, False):
                if n_miss == 0 and not mleft:
                    break
                nl = n_left + (n_miss if mleft else 0)
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                gL = gl + (g_miss if mleft else 0.0)
                hL = hl + (h_miss if mleft else 0.0)
                gR = g_tot - gL
                hR = h_tot - hL
                gain = gL * gL / (hL + lam) + gR * gR / (hR + lam) - parent
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best_feat = f
                    thr = 0.5 * (v + v_next)
                    if thr >= v_next:
                        thr = v
                    best_thr = thr
                    best_mleft = mleft if n_miss > 0 else (n_left >= m - n_left)
    return best_gain, best_feat, best_thr, best_mleft, g_tot, h_tot


@njit(cache=True)
def _partition(XT, order, feats, start, end, feat, thr, mleft, goes_left, buf):
    """Stable split of every feature's segment into left then right; returns left size."""
    row = XT[feat]
    n_left = 0
    for p in range(start, end):
        i = order[0, p]
        v = row[i]
        if np.isnan(v):
            gl = mleft
        else:
            gl = v <= thr
        goes_left[i] = gl
        if gl:
            n_left += 1
    for fi in range(len(feats)):
        a = 0
        b = n_left
        for p in range(start, end):
            i = order[fi, p]
            if goes_left[i]:
                buf[a] = i
                a += 1
            else:
                buf[b] = i
                b += 1
        for p in range(end - start):
            order[fi, start + p] = buf[p]
    return n_left


@njit(cache=True)
def _grow_tree(XT, g, h, order, feats, max_leaves, max_depth, min_leaf, lam):
    n = order.shape[1]
    cap = 2 * max_leaves + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    missing_left = np.zeros(cap, dtype=np.bool_)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    seg_start = np.zeros(cap, dtype=np.int64)
    seg_end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    cand_gain = np.zeros(cap)
    cand_feat = np.full(cap, -1, dtype=np.int64)
    cand_thr = np.zeros(cap)
    cand_mleft = np.zeros(cap, dtype=np.bool_)
    is_leaf = np.zeros(cap, dtype=np.bool_)
    goes_left = np.zeros(g.shape[0], dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)

    n_nodes = 1
    seg_start[0] = 0
    seg_end[0] = n
    is_leaf[0] = True
    gain, f, thr, ml, gt, ht = _best_split(XT, g, h, order, feats, 0, n, lam, min_leaf)
    value[0] = -gt / (ht + lam)
    if max_depth > 0:
        cand_gain[0], cand_feat[0], cand_thr[0], cand_mleft[0] = gain, f, thr, ml
    n_leaves = 1
    while n_leaves < max_leaves:
        best = -1
        best_gain = 0.0
        for node in range(n_nodes):
            if is_leaf[node] and cand_feat[node] >= 0 and cand_gain[node] > best_gain:
                best = node
                best_gain = cand_gain[node]
        if best < 0:
            break
        s, e = seg_start[best], seg_end[best]
        n_left = _partition(XT, order, feats, s, e, cand_feat[best], cand_thr[best],
                            cand_mleft[best], goes_left, buf)
        feature[best] = cand_feat[best]
        threshold[best] = cand_thr[best]
        missing_left[best] = cand_mleft[best]
        is_leaf[best] = False
        for side in range(2):
            child = n_nodes
            n_nodes += 1
            if side == 0:
                left[best] = child
                seg_start[child], seg_end[child] = s, s + n_left
            else:
                right[best] = child
                seg_start[child], seg_end[child] = s + n_left, e
            depth[child] = depth[best] + 1
            is_leaf[child] = True
            gain, f, thr, ml, gt, ht = _best_split(XT, g, h, order, feats, seg_start[child],
                                                   seg_end[child], lam, min_leaf)
            value[child] = -gt / (ht + lam)
            if depth[child] < max_depth:
                cand_gain[child], cand_feat[child], cand_thr[child], cand_mleft[child] = gain, f, thr, ml
        n_leaves += 1
    for node in range(n_nodes):
        if not is_leaf[node]:
            value[node] = 0.0
    return (feature[:n_nodes], threshold[:n_nodes], missing_left[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


MISSING_BIN = 255


def bin_features(X: np.ndarray, max_bins: int = 255):
    """Quantile bins per feature: (codes uint8 (n, F), thresholds list, n_bins array).

    Bin edges are data values picked by sample rank, so the binning depends
    only on the order of values and is unchanged by monotone transforms.
    A feature with at most ``max_bins`` distinct values is binned exactly.
    NaN maps to ``MISSING_BIN``. Split after bin ``b`` means ``x <= thresholds[f][b]``.
    """
    if not 2 <= max_bins <= 255:
        raise ValueError("max_bins must be in [2, 255]")
    n, n_feat = X.shape
    codes = np.full((n, n_feat), MISSING_BIN, dtype=np.uint8)
    thresholds = []
    n_bins = np.zeros(n_feat, dtype=np.int64)
    for f in range(n_feat):
        col = X[:, f]
        ok = ~np.isnan(col)
        vals = np.sort(col[ok])
        uniq = np.unique(vals)
        if uniq.size <= max_bins:
            edges = uniq
        else:
            picks = vals[(np.arange(1, max_bins) * vals.size) // max_bins]
            edges = np.unique(np.concatenate([picks, uniq[-1:]]))
        codes[ok, f] = np.searchsorted(edges, col[ok], side="left")
        # threshold between an edge and the next distinct value above it
        nxt = uniq[np.minimum(np.searchsorted(uniq, edges, side="right"), uniq.size - 1)]
        thr = 0.5 * (edges + nxt)
        thr = np.where(thr >= nxt, edges, thr)
        thresholds.append(thr)
        n_bins[f] = edges.size
    return codes, thresholds, n_bins


@njit(cache=True)
def _build_hist(codes, g, h, rows, start, end, feats, hist, counts):
    hist[:] = 0.0
    counts[:] = 0
    for p in range(start, end):
        i = rows[p]
        gi = g[i]
        hi = h[i]
        for fi in range(len(feats)):
            b = codes[i, feats[fi]]
            hist[fi, b, 0] += gi
            hist[fi, b, 1] += hi
            counts[fi, b] += 1


@njit(cache=True)
def _hist_split(hist, counts, feats, n_bins, lam, min_leaf):
    g_tot = 0.0
    h_tot = 0.0
    m = 0
    for b in range(256):
        g_tot += hist[0, b, 0]
        h_tot += hist[0, b, 1]
        m += counts[0, b]
    parent = g_tot * g_tot / (h_tot + lam)
    best_gain = 0.0
    best_fi = -1
    best_bin = 0
    best_mleft = False
    for fi in range(len(feats)):
        nb = n_bins[feats[fi]]
        g_miss = hist[fi, 255, 0]
        h_miss = hist[fi, 255, 1]
        n_miss = counts[fi, 255]
        gl = 0.0
        hl = 0.0
        nl0 = 0
        for b in range(nb - 1):
            gl += hist[fi, b, 0]
            hl += hist[fi, b, 1]
            nl0 += counts[fi, b]
            if counts[fi, b] == 0 and b > 0:
                # an empty bin repeats the previous candidate
                continue
            for mleft in (True, False):
                if n_miss == 0 and not mleft:
                    break
                nl = nl0 + (n_miss if mleft else 0)
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                gL = gl + (g_miss if mleft else 0.0)
                hL = hl + (h_miss if mleft else 0.0)
                gR = g_tot - gL
                hR = h_tot - hL
                gain = gL * gL / (hL + lam) + gR * gR / (hR + lam) - parent
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best_fi = fi
                    best_bin = b
                    best_mleft = mleft if n_miss > 0 else (nl0 >= m - nl0)
    return best_gain, best_fi, best_bin, best_mleft, g_tot, h_tot


@njit(cache=True)
def _grow_tree_hist(codes, g, h, rows, feats, n_bins, thr_table, max_leaves, max_depth, min_leaf, lam):
    n = rows.shape[0]
    n_sel = len(feats)
    cap = 2 * max_leaves + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    missing_left = np.zeros(cap, dtype=np.bool_)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    seg_start = np.zeros(cap, dtype=np.int64)
    seg_end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    cand_gain = np.zeros(cap)
    cand_fi = np.full(cap, -1, dtype=np.int64)
    cand_bin = np.zeros(cap, dtype=np.int64)
    cand_mleft = np.zeros(cap, dtype=np.bool_)
    is_leaf = np.zeros(cap, dtype=np.bool_)
    hists = np.zeros((cap, n_sel, 256, 2))
    cnts = np.zeros((cap, n_sel, 256), dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)

    seg_start[0] = 0
    seg_end[0] = n
    is_leaf[0] = True
    _build_hist(codes, g, h, rows, 0, n, feats, hists[0], cnts[0])
    gain, fi, b, ml, gt, ht = _hist_split(hists[0], cnts[0], feats, n_bins, lam, min_leaf)
    value[0] = -gt / (ht + lam)
    if max_depth > 0:
        cand_gain[0], cand_fi[0], cand_bin[0], cand_mleft[0] = gain, fi, b, ml
    n_nodes = 1
    n_leaves = 1
    while n_leaves < max_leaves:
        best = -1
        best_gain = 0.0
        for node in range(n_nodes):
            if is_leaf[node] and cand_fi[node] >= 0 and cand_gain[node] > best_gain:
                best = node
                best_gain = cand_gain[node]
        if best < 0:
            break
        s, e = seg_start[best], seg_end[best]
        f = feats[cand_fi[best]]
        bsplit = cand_bin[best]
        mleft = cand_mleft[best]
        a = 0
        c = e - s
        for p in range(s, e):
            i = rows[p]
            code = codes[i, f]
            if code == 255:
                go = mleft
            else:
                go = code <= bsplit
            if go:
                buf[a] = i
                a += 1
            else:
                c -= 1
                buf[c] = i
        # right side was filled backwards; restore original relative order
        for p in range(a):
            rows[s + p] = buf[p]
        for p in range(e - s - a):
            rows[s + a + p] = buf[e - s - 1 - p]
        n_left = a
        feature[best] = f
        threshold[best] = thr_table[f, bsplit]
        missing_left[best] = mleft
        is_leaf[best] = False
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[best] = lc
        right[best] = rc
        seg_start[lc], seg_end[lc] = s, s + n_left
        seg_start[rc], seg_end[rc] = s + n_left, e
        # build the smaller child's histogram, derive the other by subtraction
        if n_left <= e - s - n_left:
            small, large = lc, rc
        else:
            small, large = rc, lc
        _build_hist(codes, g, h, rows, seg_start[small], seg_end[small], feats, hists[small], cnts[small])
        hists[large] = hists[best] - hists[small]
        cnts[large] = cnts[best] - cnts[small]
        for child in (lc, rc):
            depth[child] = depth[best] + 1
            is_leaf[child] = True
            gain, fi, b, ml, gt, ht = _hist_split(hists[child], cnts[child], feats, n_bins, lam, min_leaf)
            value[child] = -gt / (ht + lam)
            if depth[child] < max_depth:
                cand_gain[child], cand_fi[child], cand_bin[child], cand_mleft[child] = gain, fi, b, ml
        n_leaves += 1
    for node in range(n_nodes):
        if not is_leaf[node]:
            value[node] = 0.0
    return (feature[:n_nodes], threshold[:n_nodes], missing_left[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], seg_start[:n_nodes], seg_end[:n_nodes])


@njit(cache=True)
def _add_leaf_values(scores, rows, seg_lo, seg_hi, left, value, rate):
    for node in range(len(left)):
        if left[node] < 0:
            for p in range(seg_lo[node], seg_hi[node]):
                scores[rows[p]] += rate * value[node]


# --------------------------------------------------------------------------- booster

def group_pointer(group) -> np.ndarray:
    """Offsets of contiguous runs in a group-id array (groups must be contiguous)."""
    group = np.asarray(group)
    if group.size == 0:
        return np.zeros(1, dtype=np.int64)
    change = np.flatnonzero(group[1:] != group[:-1]) + 1
    ptr = np.concatenate([[0], change, [group.size]]).astype(np.int64)
    ids = group[ptr[:-1]]
    if len(np.unique(ids)) != len(ids):
        raise ValueError("samples of a group must be contiguous")
    return ptr


class LambdaMART(BaseEstimator):
    """Boosted LambdaRank trees with early stopping on a validation set.

    ``fit(X, y, group, eval_set=(X_val, y_val, group_val))``; ``group`` gives
    the query/slate id of every sample (contiguous runs).
    """

    def __init__(self, n_trees: int = 1000, learning_rate: float = 0.05, max_leaves: int = 31,
                 max_depth: int = 8, min_samples_leaf: int = 20, l2_leaf_reg: float = 1.0,
                 feature_subsample: float = 1.0, row_subsample: float = 1.0, sigma: float = 1.0,
                 early_stopping_patience: int | None = 50, max_bins: int | None = 255, k: int = 10,
                 random_state: int = 0):
        self.n_trees = n_trees
        self.learning_rate = learning_rate
        self.max_leaves = max_leaves
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.l2_leaf_reg = l2_leaf_reg
        self.feature_subsample = feature_subsample
        self.row_subsample = row_subsample
        self.sigma = sigma
        self.early_stopping_patience = early_stopping_patience
        self.max_bins = max_bins
        self.k = k
        self.random_state = random_state

    def _validate_params(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        for name in ("learning_rate", "feature_subsample", "row_subsample"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.max_leaves < 2 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("max_leaves >= 2, max_depth >= 1 and min_samples_leaf >= 1 required")
        if self.l2_leaf_reg <= 0 or self.sigma <= 0:
            raise ValueError("l2_leaf_reg and sigma must be > 0")

    def fit(self, X, y, group, eval_set=None):
        self._validate_params()
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan", ensure_min_samples=1)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one label per sample")
        ptr = group_pointer(group)
        self.n_features_in_ = X.shape[1]
        valid = None
        if eval_set is not None:
            Xv, yv, gv = eval_set
            Xv = check_array(Xv, dtype=np.float64, ensure_all_finite="allow-nan")
            if Xv.shape[1] != X.shape[1]:
                raise ValueError("validation feature width differs from training")
            valid = (Xv, np.asarray(yv, dtype=np.float64), group_pointer(gv))
        elif self.early_stopping_patience is not None and self.n_trees > 0:
            logger.debug("no eval_set: early stopping disabled")

        rng = np.random.default_rng(self.random_state)
        n_feat = X.shape[1]
        if self.max_bins is None:
            XT = np.ascontiguousarray(X.T)
            full_order = _presort(XT)
        else:
            codes, thr_list, n_bins = bin_features(X, int(self.max_bins))
            thr_table = np.zeros((n_feat, 256))
            for f, thr in enumerate(thr_list):
                thr_table[f, :len(thr)] = thr
        all_rows = np.arange(X.shape[0], dtype=np.int64)
        n_groups = len(ptr) - 1
        scores = np.zeros(X.shape[0])
        valid_scores = np.zeros(valid[0].shape[0]) if valid is not None else None
        self.trees_: list[RegressionTree] = []
        self.valid_history_: list[float] = []
        best_iter, best_val, since_best = 0, -np.inf, 0
        if valid is not None:
            best_val = float(grouped_ndcg(valid_scores, valid[1], valid[2], self.k).mean())
        patience = self.early_stopping_patience
        n_sel = max(1, int(round(self.feature_subsample * n_feat)))
        for it in range(self.n_trees):
            grad, hess = lambda_gradients(scores, y, ptr, self.k, self.sigma)
            feats = np.sort(rng.choice(n_feat, n_sel, replace=False)) if n_sel < n_feat \
                else np.arange(n_feat)
            feats = feats.astype(np.int64)
            keep = None
            tree_done = False
            if self.row_subsample < 1.0:
                keep = np.repeat(rng.random(n_groups) < self.row_subsample, np.diff(ptr))
            if keep is not None and not keep.any():
                tree = RegressionTree.leaf(0.0)
            elif self.max_bins is None:
                order = full_order[feats] if keep is None else \
                    np.stack([row[keep[row]] for row in full_order[feats]])
                tree = RegressionTree(*_grow_tree(
                    XT, grad, hess, order, feats, int(self.max_leaves), int(self.max_depth),
                    int(self.min_samples_leaf), float(self.l2_leaf_reg)))
            else:
                rows = all_rows.copy() if keep is None else all_rows[keep]
                *parts, seg_lo, seg_hi = _grow_tree_hist(
                    codes, grad, hess, rows, feats, n_bins, thr_table, int(self.max_leaves),
                    int(self.max_depth), int(self.min_samples_leaf), float(self.l2_leaf_reg))
                tree = RegressionTree(*parts)
                if keep is None:
                    # every training row sits in a leaf segment of ``rows``: skip routing
                    _add_leaf_values(scores, rows, seg_lo, seg_hi, tree.left, tree.value,
                                     float(self.learning_rate))
                    tree_done = True
            self.trees_.append(tree)
            if not tree_done:
                scores += self.learning_rate * tree.predict(X)
            if valid is not None:
                valid_scores += self.learning_rate * tree.predict(valid[0])
                val = float(grouped_ndcg(valid_scores, valid[1], valid[2], self.k).mean())
                self.valid_history_.append(val)
                if val > best_val:
                    best_iter, best_val, since_best = it + 1, val, 0
                else:
                    since_best += 1
                    if patience is not None and since_best >= patience:
                        break
        if valid is None:
            best_iter = len(self.trees_)
            best_val = float(grouped_ndcg(scores, y, ptr, self.k).mean())
        self.best_iteration_ = best_iter
        self.best_score_ = best_val
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan", ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = np.zeros(X.shape[0])
        for tree in self.trees_[:self.best_iteration_]:
            out += tree.predict(X)
        return self.learning_rate * out

    # text format: header line, then one line per node
    def to_text(self) -> str:
        check_is_fitted(self, "trees_")
        lines = [f"lambdamart\t{FORMAT_VERSION}\t{self.learning_rate!r}\t{self.best_iteration_}\t"
                 f"{self.n_features_in_}\t{len(self.trees_)}"]
        for t, tree in enumerate(self.trees_):
            for n in range(len(tree.left)):
                lines.append(f"{t}\t{n}\t{int(tree.feature[n])}\t{float(tree.threshold[n])!r}\t"
                             f"{int(tree.missing_left[n])}\t{int(tree.left[n])}\t{int(tree.right[n])}\t"
                             f"{float(tree.value[n])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LambdaMART":
        rows = text.splitlines()
        tag, version, lr, best, n_feat, n_trees = rows[0].split("\t")
        if tag != "lambdamart" or int(version) != FORMAT_VERSION:
            raise ValueError("not a ranker file of a supported version")
        model = cls(learning_rate=float(lr))
        nodes: dict[int, list] = {t: [] for t in range(int(n_trees))}
        for line in rows[1:]:
            if line:
                t, n, *rest = line.split("\t")
                nodes[int(t)].append(rest)
        model.trees_ = []
        for t in range(int(n_trees)):
            cols = list(zip(*nodes[t]))
            model.trees_.append(RegressionTree(
                np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.float64),
                np.array(cols[2], dtype=np.int64).astype(bool), np.array(cols[3], dtype=np.int64),
                np.array(cols[4], dtype=np.int64), np.array(cols[5], dtype=np.float64)))
        model.best_iteration_ = int(best)
        model.n_features_in_ = int(n_feat)
        return model


@dataclass(frozen=True)
class RankingData:
    """Samples grouped by slate: features (NaN = missing), binary labels, group ids."""

    X: np.ndarray
    y: np.ndarray
    group: np.ndarray
    feature_names: tuple[str, ...] = ()

    @property
    def group_ptr(self) -> np.ndarray:
        return group_pointer(self.group)

    def subset_groups(self, mask_per_group: np.ndarray) -> "RankingData":
        ptr = self.group_ptr
        keep = np.repeat(np.asarray(mask_per_group, dtype=bool), np.diff(ptr))
        return RankingData(self.X[keep], self.y[keep], self.group[keep], self.feature_names)


def fit_ranker(train: RankingData, valid: RankingData | None, hp: dict | None = None,
               seed: int = 0) -> LambdaMART:
    """Fit a :class:`LambdaMART` with hyperparameters ``hp`` (dict of constructor args)."""
    params = dict(hp or {})
    params["random_state"] = seed
    model = LambdaMART(**params)
    if valid is not None and train.X.shape[1] != valid.X.shape[1]:
        raise ValueError("train/valid feature widths differ")
    eval_set = None if valid is None else (valid.X, valid.y, valid.group)
    return model.fit(train.X, train.y, train.group, eval_set=eval_set)


def predict(ranker: LambdaMART, samples) -> np.ndarray:
    X = samples.X if isinstance(samples, RankingData) else samples
    return ranker.predict(X)


__all__: Sequence[str] = [
    "LambdaMART", "RankingData", "RegressionTree", "fit_ranker", "group_pointer", "lambda_gradients",
    "pairwise_surrogate_loss", "predict",
]

import math

import numpy as np
import pytest
from scipy.stats import rankdata
from hypothesis import given, settings
from hypothesis import strategies as st

from xmrec.metrics import grouped_ndcg
from xmrec.ranker import (LambdaMART, RankingData, RegressionTree, fit_ranker, group_pointer, lambda_gradients,
                          pairwise_surrogate_loss, predict)


def swap_weights(scores, labels, ptr, k=10):
    """Independent |dNDCG| swap weights for every (pos, neg) pair at the current ranking."""
    out = {}
    for g in range(len(ptr) - 1):
        s, y = scores[ptr[g]:ptr[g + 1]], labels[ptr[g]:ptr[g + 1]]
        if y.max() == y.min():
            continue
        rank = np.empty(len(s), dtype=int)
        rank[np.argsort(-s, kind="mergesort")] = np.arange(len(s))
        disc = np.where(rank < k, 1 / np.log2(rank + 2.0), 0.0)
        idcg = sum(1 / math.log2(r + 2) for r in range(min(int((y > 0).sum()), k)))
        for a in range(len(s)):
            for b in range(len(s)):
                if y[a] > y[b]:
                    out[(g, a, b)] = abs((y[a] - y[b]) * (disc[a] - disc[b])) / idcg
    return out


def random_groups(rng, n_groups, size):
    labels = np.zeros(n_groups * size)
    for g in range(n_groups):
        labels[g * size + rng.choice(size, rng.integers(1, size), replace=False)] = 1
    return rng.normal(size=n_groups * size), labels, np.arange(0, n_groups * size + 1, size)


def separable(n_groups, rng, size=100):
    X = rng.normal(size=(n_groups * size, 4))
    y = np.zeros(n_groups * size)
    pos = np.arange(n_groups) * size + rng.integers(0, size, n_groups)
    y[pos] = 1
    X[:, 0] = rng.uniform(-1, 0.9, len(y))
    X[pos, 0] = rng.uniform(1, 2, n_groups)
    return RankingData(X, y, np.repeat(np.arange(n_groups), size))


class TestGradients:
    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        scores, labels, ptr = random_groups(rng, 100, 5)
        grad, hess = lambda_gradients(scores, labels, ptr)
        w = swap_weights(scores, labels, ptr)
        f0 = pairwise_surrogate_loss(scores, labels, ptr, w)
        fd = np.empty_like(scores)
        fd2 = np.empty_like(scores)
        for i in range(len(scores)):
            step = np.zeros_like(scores)
            step[i] = 1.0
            f = lambda e: pairwise_surrogate_loss(scores + e * step, labels, ptr, w)
            fd[i] = (f(1e-6) - f(-1e-6)) / 2e-6
            fd2[i] = (f(1e-4) - 2 * f0 + f(-1e-4)) / 1e-8
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)
        # the hessian is the diagonal of the surrogate's second derivative
        np.testing.assert_allclose(hess, fd2, rtol=1e-3, atol=1e-5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12))
    def test_group_sums_are_zero(self, seed, size):
        rng = np.random.default_rng(seed)
        scores, labels, ptr = random_groups(rng, 10, size)
        grad, hess = lambda_gradients(scores, labels, ptr)
        for g in range(10):
            assert grad[ptr[g]:ptr[g + 1]].sum() == 0.0 or \
                abs(grad[ptr[g]:ptr[g + 1]].sum()) <= 1e-15 * np.abs(grad).sum()
        assert np.all(hess >= 0)

    def test_degenerate_groups_skipped(self, caplog):
        grad, hess = lambda_gradients(np.zeros(6), np.array([0, 0, 0, 1, 1, 1.0]), np.array([0, 3, 6]))
        assert not grad.any() and not hess.any()
        assert "skipped" in caplog.text

    def test_positive_pushed_up(self):
        grad, _ = lambda_gradients(np.array([1.0, 0.0, 0.5]), np.array([0, 1, 0.0]), np.array([0, 3]))
        assert grad[1] < 0 and grad[0] > 0 and grad[2] > 0


class TestTree:
    def test_nan_routing(self):
        X = np.array([[0.0], [2.0], [np.nan]])
        np.testing.assert_array_equal(RegressionTree.stump(0, 1.0, -1, 1, missing_left=True).predict(X), [-1, 1, -1])
        np.testing.assert_array_equal(RegressionTree.stump(0, 1.0, -1, 1, missing_left=False).predict(X), [-1, 1, 1])

    def test_group_pointer(self):
        np.testing.assert_array_equal(group_pointer([5, 5, 2, 2, 2, 9]), [0, 2, 5, 6])
        with pytest.raises(ValueError, match="contiguous"):
            group_pointer([1, 2, 1])


class TestLambdaMART:
    @pytest.mark.parametrize("max_bins", [255, None])
    def test_separable(self, max_bins):
        rng = np.random.default_rng(1)
        train, valid = separable(50, rng), separable(50, rng)
        hp = dict(n_trees=200, learning_rate=0.1, min_samples_leaf=5, max_bins=max_bins)
        model = fit_ranker(train, valid, hp, seed=0)
        assert max(model.valid_history_) >= 0.95
        # early stopping keeps the argmax iteration
        assert model.best_iteration_ == int(np.argmax(model.valid_history_)) + 1
        assert model.best_score_ == max(model.valid_history_)
        got = grouped_ndcg(predict(model, valid), valid.y, valid.group_ptr).mean()
        assert got == pytest.approx(model.best_score_, abs=1e-12)

    def test_monotone_transform_invariance(self):
        # quantile bins depend on value order only
        rng = np.random.default_rng(2)
        data = separable(20, rng)
        X2 = data.X.copy()
        X2[:, 0] = np.exp(3 * X2[:, 0])
        X2[:, 1] = X2[:, 1] ** 3
        X2[:, 2] = rankdata(X2[:, 2])
        hp = dict(n_trees=10, learning_rate=0.1, min_samples_leaf=5, max_leaves=7)
        a = fit_ranker(data, None, hp)
        b = fit_ranker(RankingData(X2, data.y, data.group), None, hp)
        assert [t.split_features() for t in a.trees_] == [t.split_features() for t in b.trees_]
        np.testing.assert_allclose(a.predict(data.X), b.predict(X2), atol=1e-12)

    def test_deterministic_and_text_roundtrip(self):
        rng = np.random.default_rng(3)
        data = separable(15, rng)
        hp = dict(n_trees=15, feature_subsample=0.5, row_subsample=0.7, min_samples_leaf=3)
        a = fit_ranker(data, None, hp, seed=4)
        b = fit_ranker(data, None, hp, seed=4)
        assert a.to_text() == b.to_text()
        back = LambdaMART.from_text(a.to_text())
        np.testing.assert_array_equal(back.predict(data.X), a.predict(data.X))

    def test_missing_values_accepted(self):
        rng = np.random.default_rng(5)
        data = separable(10, rng)
        X = data.X.copy()
        X[rng.random(X.shape) < 0.2] = np.nan
        model = fit_ranker(RankingData(X, data.y, data.group), None, dict(n_trees=5, min_samples_leaf=3))
        assert np.all(np.isfinite(model.predict(X)))

    def test_width_mismatch(self):
        rng = np.random.default_rng(6)
        data = separable(5, rng)
        model = fit_ranker(data, None, dict(n_trees=2, min_samples_leaf=3))
        with pytest.raises(ValueError, match="features"):
            model.predict(data.X[:, :3])
        with pytest.raises(ValueError):
            fit_ranker(data, RankingData(data.X[:, :3], data.y, data.group), dict(n_trees=2))

    def test_bad_params(self):
        with pytest.raises(ValueError):
            LambdaMART(learning_rate=0.0).fit(np.zeros((2, 1)), [0, 1], [0, 0])

    def test_stump_and_additivity(self):
        model = LambdaMART(learning_rate=0.1)
        model.trees_ = [RegressionTree.stump(0, 0.5, -1.0, 1.0)]
        model.best_iteration_, model.n_features_in_ = 1, 1
        assert model.predict([[0.2]])[0] == pytest.approx(-0.1)
        single = model.predict([[0.2], [0.9]])
        model.trees_ = model.trees_ * 2
        model.best_iteration_ = 2
        np.testing.assert_array_equal(model.predict([[0.2], [0.9]]), 2 * single)

    def test_zero_trees_predicts_zero(self):
        model = LambdaMART(n_trees=0).fit(np.ones((3, 2)), [0, 1, 0], [0, 0, 0])
        assert not model.predict(np.ones((4, 2))).any()

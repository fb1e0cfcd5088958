import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmrec.io import ScoredSlate
from xmrec.metrics import (EvalReport, evaluate_run, grouped_ndcg, ndcg_at_k, positive_rank_ndcg, slate_ndcg,
                           tie_break)
from xmrec.profiles import ProfileGroup, assign_group, assign_groups

# E[NDCG@10] when the positive's rank is uniform on 1..100
RANDOM_EXPECTATION = sum(0.01 / math.log2(r + 1) for r in range(1, 11))


def brute_force_ndcg(ranked, relevant, k=10):
    gains = [1.0 if item in relevant else 0.0 for item in ranked]
    dcg = sum(g / math.log2(pos + 2) for pos, g in enumerate(gains[:k]))
    ideal = sorted(gains, reverse=True)
    idcg = sum(g / math.log2(pos + 2) for pos, g in enumerate(ideal[:k]))
    return dcg / idcg if idcg else 0.0


class TestNdcg:
    @pytest.mark.parametrize("rank,expected", [(1, 1.0), (3, 0.5), (10, 1 / math.log2(11)), (11, 0.0)])
    def test_ranks(self, rank, expected):
        ranked = [f"i{k}" for k in range(100)]
        assert ndcg_at_k(ranked, f"i{rank - 1}") == pytest.approx(expected, abs=1e-15)

    def test_absent_positive(self):
        with pytest.raises(ValueError):
            ndcg_at_k(["a", "b"], "c")

    def test_closed_form_expectation(self):
        # frozen value of the sum; the rank of the positive is uniform on 1..100
        assert RANDOM_EXPECTATION == pytest.approx(0.0454355934, abs=1e-10)
        rng = np.random.default_rng(9)
        mean = positive_rank_ndcg(rng.random((10_000, 100)), rng.integers(0, 100, 10_000)).mean()
        assert abs(mean - RANDOM_EXPECTATION) <= 0.005

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            items = [f"i{k}" for k in rng.permutation(100)]
            pos = items[int(rng.integers(100))]
            assert abs(ndcg_at_k(items, pos) - brute_force_ndcg(items, {pos})) <= 1e-12


class TestTieBreak:
    def test_secondary_breaks_ties(self):
        order = tie_break(["i1", "i2"], [0.5, 0.5], [0.1, 0.9])
        assert [["i1", "i2"][j] for j in order] == ["i2", "i1"]

    def test_token_last(self):
        order = tie_break(["b", "a", "c"], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
        assert list(order) == [1, 0, 2]

    def test_no_ties_is_primary_order(self):
        rng = np.random.default_rng(1)
        s = rng.random(50)
        items = [f"x{k}" for k in range(50)]
        np.testing.assert_array_equal(tie_break(items, s, rng.random(50)), np.argsort(-s))

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.randoms())
    def test_total_and_deterministic(self, scores, rnd):
        items = [f"t{k:02d}" for k in range(len(scores))]
        a = tie_break(items, scores)
        perm = list(range(len(items)))
        rnd.shuffle(perm)
        b = tie_break([items[p] for p in perm], [scores[p] for p in perm])
        assert sorted(a.tolist()) == list(range(len(items)))
        assert [items[j] for j in a] == [[items[p] for p in perm][j] for j in b]


class TestVectorised:
    def test_grouped_matches_scalar(self):
        rng = np.random.default_rng(2)
        scores = rng.random(500)
        labels = np.zeros(500)
        labels[np.arange(5) * 100 + rng.integers(0, 100, 5)] = 1
        ptr = np.arange(0, 501, 100)
        got = grouped_ndcg(scores, labels, ptr)
        for g in range(5):
            items = [f"i{k}" for k in range(100)]
            pos = items[int(labels[ptr[g]:ptr[g + 1]].argmax())]
            assert got[g] == pytest.approx(slate_ndcg(items, scores[ptr[g]:ptr[g + 1]], pos), abs=1e-12)

    def test_positive_rank_ties_prefer_earlier(self):
        s = np.array([[1.0, 1.0, 0.0]])
        assert positive_rank_ndcg(s, np.array([1]))[0] == pytest.approx(1 / math.log2(3))
        assert positive_rank_ndcg(s, np.array([0]))[0] == 1.0

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=40), st.integers(0, 100))
    def test_positive_rank_equals_grouped(self, scores, seed):
        s = np.array(scores)
        pos = seed % len(s)
        labels = np.zeros(len(s))
        labels[pos] = 1
        a = positive_rank_ndcg(s[None, :], np.array([pos]))[0]
        b = grouped_ndcg(s, labels, np.array([0, len(s)]))[0]
        assert a == pytest.approx(b, abs=1e-12)


class TestProfileGroups:
    @pytest.mark.parametrize("length,group", [(0, 0), (4, 0), (5, 1), (7, 1), (8, 2), (11, 2), (12, 3), (500, 3)])
    def test_edges(self, length, group):
        assert assign_group(length) == ProfileGroup(group)
        assert assign_groups([length])[0] == group


def _slate(user, pos_rank, rng):
    items = tuple(f"{user}_{k}" for k in range(100))
    scores = np.zeros(100)
    order = rng.permutation(100)
    scores[order] = np.arange(100, 0, -1)
    return ScoredSlate(user, items, scores), items[order[pos_rank - 1]]


class TestEvaluateRun:
    def test_all_first(self):
        rng = np.random.default_rng(3)
        slates, qrels, prof = [], {}, {}
        for u in range(20):
            s, pos = _slate(f"u{u}", 1, rng)
            slates.append(s)
            qrels[s.user_id] = pos
            prof[s.user_id] = u
        row = evaluate_run(slates, qrels, prof).rows[0]
        assert row.mean == 1.0
        assert all(v == 1.0 for v in row.group_means.values())

    def test_mean_of_two(self):
        rng = np.random.default_rng(4)
        a, pa = _slate("a", 1, rng)
        b, pb = _slate("b", 50, rng)
        row = evaluate_run([a, b], {"a": pa, "b": pb}, {"a": 3, "b": 20}).rows[0]
        assert row.mean == 0.5
        assert row.group_counts == {"Short": 1, "QuiteShort": 0, "QuiteLong": 0, "Long": 1}

    def test_weighted_group_identity_and_order_invariance(self):
        rng = np.random.default_rng(5)
        slates, qrels, prof = [], {}, {}
        for u in range(200):
            s, pos = _slate(f"u{u}", int(rng.integers(1, 20)), rng)
            slates.append(s)
            qrels[s.user_id] = pos
            prof[s.user_id] = int(rng.integers(1, 30))
        row = evaluate_run(slates, qrels, prof).rows[0]
        weighted = sum(row.group_means[g] * row.group_counts[g] for g in row.group_means) / row.n_users
        assert abs(weighted - row.mean) <= 1e-12
        again = evaluate_run(slates[::-1], qrels, prof).rows[0]
        assert again.mean == row.mean and again.group_means == row.group_means

    def test_missing_qrel(self):
        s, _ = _slate("a", 1, np.random.default_rng(0))
        with pytest.raises(KeyError, match="qrel"):
            evaluate_run([s], {}, {"a": 1})

    def test_report_rendering(self):
        s, pos = _slate("a", 2, np.random.default_rng(0))
        rep = evaluate_run([s], {"a": pos}, {"a": 6}, "t1", "EASE")
        rep = rep + evaluate_run([s], {"a": pos}, {"a": 6}, "t1", "EASE", "minmax")
        assert isinstance(rep, EvalReport)
        assert rep.get("t1", "EASE", "minmax").mean == pytest.approx(1 / math.log2(3))
        tsv = rep.to_tsv().splitlines()
        assert tsv[0].startswith("dataset\tmodel\tvariant") and len(tsv) == 3
        assert "[EASE]" in rep.to_text()

import numpy as np
import pytest

from xmrec.fusion import MarketCombo, fuse
from xmrec.io import CandidateSlate, IdMap, InteractionStore
from xmrec.metrics import positive_rank_ndcg
from xmrec.pipeline import (FeatureSpec, SlateBatch, assemble_features, cv_train_predict, dataset_factors,
                            feature_table_tsv, final_stack, make_cv_plan, read_schema_hash, score_table, stage2,
                            stats_features, tune_recommender)
from xmrec.ranker import RankingData


def ranking_data(n_groups, size=4, seed=0, width=3):
    rng = np.random.default_rng(seed)
    y = np.zeros(n_groups * size)
    y[np.arange(n_groups) * size + rng.integers(0, size, n_groups)] = 1
    return RankingData(rng.normal(size=(n_groups * size, width)), y, np.repeat(np.arange(n_groups), size))


class FoldStub:
    """Ranker stand-in predicting the constant it was seeded with; remembers its training groups."""

    log = []

    def __init__(self, train, hold, hp, seed):
        self.seed = seed
        self.train_groups = set(train.group.tolist())
        assert not self.train_groups & set(hold.group.tolist())
        FoldStub.log.append(self)

    @staticmethod
    def fit(train, hold, hp, seed):
        return FoldStub(train, hold, hp, seed)

    @staticmethod
    def predict(model, data):
        # a prediction for a group the model trained on would be poisoned
        trained = np.isin(data.group, list(model.train_groups))
        return np.where(trained, np.nan, float(model.seed)) if data.y.any() else np.full(len(data.y), model.seed)


class TestCvPlan:
    def test_partition(self):
        plan = make_cv_plan(np.repeat(np.arange(23), 3), k=5, seeds=(0, 1, 2))
        assert plan.folds.shape == (3, 23)
        for row in plan.folds:
            counts = np.bincount(row, minlength=5)
            assert counts.max() - counts.min() <= 1
        assert not np.array_equal(plan.folds[0], plan.folds[1])
        again = make_cv_plan(np.repeat(np.arange(23), 3), k=5, seeds=(0, 1, 2))
        np.testing.assert_array_equal(plan.folds, again.folds)

    @pytest.mark.parametrize("kwargs", [dict(k=1), dict(k=30), dict(seeds=()), dict(seeds=(1, 1))])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            make_cv_plan(np.arange(20), **kwargs)


class TestCrossValidation:
    def test_oof_discipline_and_test_mean(self):
        valid, test = ranking_data(40, seed=1), ranking_data(7, seed=2)
        test = RankingData(test.X, np.zeros_like(test.y), test.group)
        plan = make_cv_plan(np.arange(40), k=5, seeds=(0, 1, 2))
        FoldStub.log = []
        res = cv_train_predict(valid, test, {}, plan, FoldStub.fit, FoldStub.predict)
        assert res.n_models == 15 and len(FoldStub.log) == 15
        # every group's OOF value decodes to the models that held it out
        expected = np.mean([plan.seeds[s] * 5 + plan.folds[s] for s in range(3)], axis=0)
        np.testing.assert_array_equal(res.oof, np.repeat(expected, 4))
        for g in range(40):
            holders = [m for m in FoldStub.log if g not in m.train_groups]
            assert len(holders) == 3
        assert np.all(res.test == np.mean([m.seed for m in FoldStub.log]))

    def test_test_mean_exact(self):
        valid, test = ranking_data(20, seed=3), ranking_data(5, seed=4)
        plan = make_cv_plan(np.arange(20), k=5, seeds=(0, 1, 2))
        seen = []

        def fit(train, hold, hp, seed):
            return seed

        def pred(seed, data):
            out = data.X[:, 0] * (seed + 1) + seed
            if data is test:
                seen.append(out)
            return out

        res = cv_train_predict(valid, test, {}, plan, fit, pred)
        assert len(seen) == 15
        np.testing.assert_array_equal(res.test, np.sum(seen, axis=0) / 15)

    def test_missing_positive(self):
        valid = ranking_data(10)
        y = valid.y.copy()
        y[:4] = 0
        with pytest.raises(ValueError, match="positive"):
            cv_train_predict(RankingData(valid.X, y, valid.group), valid, {}, make_cv_plan(np.arange(10)))

    def test_real_ranker_learns_informative_column(self):
        rng = np.random.default_rng(5)
        valid, test = ranking_data(100, size=20, seed=5), ranking_data(30, size=20, seed=6)
        for d in (valid, test):
            d.X[:, 0] = d.y + 0.3 * rng.normal(size=len(d.y))
        hp = dict(n_trees=30, learning_rate=0.2, min_samples_leaf=5, early_stopping_patience=10)
        res = cv_train_predict(valid, test, hp, make_cv_plan(np.arange(100)))
        got = positive_rank_ndcg(res.test.reshape(30, 20), test.y.reshape(30, 20).argmax(axis=1)).mean()
        baseline = positive_rank_ndcg(test.X[:, 0].reshape(30, 20), test.y.reshape(30, 20).argmax(axis=1)).mean()
        assert got >= baseline - 0.05 and res.cv_ndcg > 0.8


@pytest.fixture(scope="module")
def fused_t1(small_world):
    _, bundles = small_world
    ds = fuse(MarketCombo(("s1",), ("t1",)), bundles)
    return ds, bundles["t1"]


class TestFeatures:
    def test_slate_batch(self, small_world):
        _, bundles = small_world
        b = SlateBatch.from_slates(bundles["t1"].valid_slates)
        assert b.items.shape == (120, 100) and b.labels.sum() == 120
        assert SlateBatch.from_slates(bundles["t1"].test_slates).labels is None
        with pytest.raises(ValueError, match="positive"):
            SlateBatch.from_slates(bundles["t1"].test_slates, {s.user_id: "nope" for s in bundles["t1"].test_slates})

    def test_assemble(self, fused_t1):
        ds, t1 = fused_t1
        batch = SlateBatch.from_slates(t1.valid_slates)
        scores = {"A": np.random.default_rng(0).random((120, 100)), "B": np.zeros((120, 100))}
        factors = dataset_factors(ds.store, 12)
        widths = {}
        for variant in ("none", "minmax", "both"):
            data, spec = assemble_features(ds.store, batch, scores, variant, factors=factors)
            assert data.X.shape == (12000, spec.width)
            widths[variant] = spec.width
        assert widths["both"] == widths["none"] + 2 == widths["minmax"] + 2
        assert widths["none"] == 2 + 7 + 24
        names = spec.names
        uf = data.X[:, [j for j, n in enumerate(names) if n.startswith("user_factor")]]
        np.testing.assert_allclose(np.linalg.norm(uf, axis=1), 1.0, atol=1e-12)
        with pytest.raises(KeyError, match="C"):
            assemble_features(ds.store, batch, scores, "none", ["A", "C"], factors=factors)

    def test_cold_items_are_missing(self):
        store = InteractionStore(__import__("scipy.sparse", fromlist=["csr_matrix"]).csr_matrix(np.ones((2, 2))),
                                 IdMap(["u0", "u1"]), IdMap(["a", "b"]))
        batch = SlateBatch.from_slates([CandidateSlate("u0", ("a", "zz"), "a")])
        X, spec = stats_features(store, batch)
        pop = spec.names.index("item_popularity")
        mean = spec.names.index("item_mean_rating")
        assert X[1, pop] == 0 and np.isnan(X[1, mean]) and X[0, pop] == 2

    def test_unknown_user(self, fused_t1):
        ds, _ = fused_t1
        from xmrec.recommenders import TopPop
        batch = SlateBatch.from_slates([CandidateSlate("ghost", ("i00001", "i00002"), "i00001")])
        with pytest.raises(KeyError, match="ghost"):
            score_table(TopPop().fit(ds.store), ds.store, batch)

    def test_schema_hash(self):
        a = FeatureSpec(("x", "y"), ("p", "q"))
        assert a.schema_hash == FeatureSpec(("x", "y"), ("p", "q")).schema_hash
        assert a.schema_hash != FeatureSpec(("y", "x"), ("q", "p")).schema_hash
        with pytest.raises(ValueError):
            FeatureSpec(("x", "x"), ("p", "p"))
        data = RankingData(np.array([[1.0, 2.0]]), np.array([1.0]), np.array([0]))
        text = feature_table_tsv(data, a, ["u"], np.array([["i"]], dtype=object))
        assert read_schema_hash(text) == a.schema_hash


class TestStages:
    def test_tune_recommender(self, fused_t1):
        ds, t1 = fused_t1
        valid = {"t1": SlateBatch.from_slates(t1.valid_slates)}
        test = {"t1": SlateBatch.from_slates(t1.test_slates)}
        config, objective, vt, tt = tune_recommender("ItemKNN", ds.store, valid, test, budget=3,
                                                      params={"top_k": 50})
        assert "top_k" not in config
        assert objective == pytest.approx(positive_rank_ndcg(vt["t1"], valid["t1"].positive_index).mean())
        assert tt["t1"].shape == (120, 100)

    def test_stage2_and_final_stack(self, small_world):
        _, bundles = small_world
        t1 = bundles["t1"]
        valid = SlateBatch.from_slates(t1.valid_slates)
        test = SlateBatch.from_slates(t1.test_slates)
        plan = make_cv_plan(np.arange(len(valid)), k=3, seeds=(0,))
        rng = np.random.default_rng(0)
        hp = dict(n_trees=5, min_samples_leaf=20, early_stopping_patience=None)
        outputs = {}
        from xmrec.pipeline import DatasetOutputs
        for cid in ("t1", "s1-t1"):
            ds = fuse(MarketCombo.from_id(cid), bundles)
            vs = {"A": rng.random((120, 100)), "B": valid.labels + rng.random((120, 100))}
            ts = {"A": rng.random((120, 100)), "B": rng.random((120, 100))}
            out = stage2(ds.store, valid, test, vs, ts, plan, hp, linear_budget=5)
            assert set(out.columns("valid")) == {"stage2:linear", "stage2:boosted_none",
                                                  "stage2:boosted_minmax", "stage2:boosted_both"}
            outputs[cid] = DatasetOutputs(ds.store, vs, ts, out)
        t1_store = fuse(MarketCombo.from_id("t1"), bundles).store
        with pytest.raises(KeyError, match="s1-s2-t1"):
            final_stack("t1", outputs, ["t1", "s1-t1", "s1-s2-t1"], t1_store, valid, test, plan, hp)
        res = final_stack("t1", outputs, ["t1", "s1-t1"], t1_store, valid, test, plan, hp, linear_budget=5)
        assert res.test_scores.shape == (120, 100) and res.linear_test.shape == (120, 100)
        assert any(n.startswith("s1-t1/stage2:") for n in res.spec.names)
        assert not any(n.endswith("/n_users") for n in res.spec.names)
        assert sum(n.startswith("target/user_factor") for n in res.spec.names) == 16
        # the informative validation column makes stage 3 near perfect out of fold
        assert res.cv_ndcg > 0.9

    def test_single_dataset_stack(self, small_world):
        _, bundles = small_world
        t1 = bundles["t1"]
        valid, test = SlateBatch.from_slates(t1.valid_slates), SlateBatch.from_slates(t1.test_slates)
        plan = make_cv_plan(np.arange(len(valid)), k=2, seeds=(0,))
        ds = fuse(MarketCombo.from_id("t1"), bundles)
        rng = np.random.default_rng(1)
        vs, ts = {"A": rng.random((120, 100))}, {"A": rng.random((120, 100))}
        hp = dict(n_trees=3, early_stopping_patience=None)
        from xmrec.pipeline import DatasetOutputs
        out = DatasetOutputs(ds.store, vs, ts, stage2(ds.store, valid, test, vs, ts, plan, hp, linear_budget=2))
        res = final_stack("t1", {"t1": out}, ["t1"], ds.store, valid, test, plan, hp, linear_budget=2)
        assert np.all(np.isfinite(res.test_scores))

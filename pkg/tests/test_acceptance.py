"""Acceptance criteria 1-8, each reporting one PASS/FAIL line.

Criterion 7 generates the full synthetic world and runs every stage; it
takes about ten minutes on one core.
"""
import json
import time

import numpy as np
import pytest

from xmrec.cli import Runner, PipelineConfig, build_report, main
from xmrec.fusion import UNIT_RATING_SUBSTITUTE, MarketCombo, combos_with_target, enumerate_combos, fuse
from xmrec.io import TARGET_MARKETS, MarketBundle, build_store
from xmrec.linear import optimize_params
from xmrec.metrics import ndcg_at_k, positive_rank_ndcg
from xmrec.pipeline import cv_train_predict, make_cv_plan
from xmrec.profiles import ProfileGroup, assign_group
from xmrec.ranker import RankingData, fit_ranker, lambda_gradients, pairwise_surrogate_loss
from xmrec.recommenders import ALS, EASE, ItemKNN, P3alpha, RP3beta

from conftest import random_store
from test_metrics import RANDOM_EXPECTATION, brute_force_ndcg
from test_ranker import random_groups, separable, swap_weights
from test_recommenders import all_scores, dense_cosine, dense_ease


def test_criterion_1_ndcg_oracle(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    items = [f"i{k:03d}" for k in range(100)]
    worst = 0.0
    for _ in range(1000):
        ranked = [items[j] for j in rng.permutation(100)]
        pos = items[int(rng.integers(100))]
        worst = max(worst, abs(ndcg_at_k(ranked, pos) - brute_force_ndcg(ranked, {pos})))
    scores = rng.random((10_000, 100))
    mean = positive_rank_ndcg(scores, rng.integers(0, 100, 10_000)).mean()
    wall = time.perf_counter() - start
    ok = worst <= 1e-12 and abs(mean - RANDOM_EXPECTATION) <= 0.005 and wall < 10
    criterion(1, ok, f"max |diff| {worst:.1e}; random mean {mean:.5f} vs {RANDOM_EXPECTATION:.5f}; {wall:.1f}s")
    assert ok


def test_criterion_2_recommender_oracles(criterion):
    start = time.perf_counter()
    ease_err = 0.0
    for lam in (0.5, 5.0, 50.0, 500.0, 5000.0):
        store = random_store(40, 30, seed=int(lam))
        X = store.matrix.toarray()
        ease_err = max(ease_err, np.abs(EASE(lam=lam).fit(store).weights_ - dense_ease(X, lam)).max())
    store = random_store(30, 25, density=0.25, seed=1)
    p3 = all_scores(P3alpha(alpha=1.0, top_k=None).fit(store), store)
    p3_err = np.abs(p3.sum(axis=1) - 1.0).max()
    rp3 = all_scores(RP3beta(alpha=1.0, beta=0.0, top_k=None).fit(store), store)
    rp3_err = np.abs(rp3 - p3).max()
    knn_store = random_store(20, 20, density=0.3, seed=2)
    knn = ItemKNN(top_k=None, shrink=0.0).fit(knn_store).similarity_.toarray()
    knn_err = np.abs(knn - dense_cosine(knn_store.matrix.toarray())).max()
    hist = np.array(ALS(factors=8, reg=0.1, conf_alpha=5.0, iterations=15)
                    .fit(random_store(60, 40, density=0.15, seed=3)).objective_history_)
    als_ok = len(hist) == 15 and bool(np.all(np.diff(hist) <= 1e-9 * np.abs(hist[:-1])))
    wall = time.perf_counter() - start
    ok = ease_err <= 1e-8 and p3_err <= 1e-10 and rp3_err <= 1e-12 and knn_err <= 1e-10 and als_ok and wall < 30
    criterion(2, ok, f"EASE {ease_err:.1e}; P3a sum {p3_err:.1e}; RP3b(0)-P3a {rp3_err:.1e}; "
                     f"ItemKNN {knn_err:.1e}; ALS monotone {als_ok}; {wall:.1f}s")
    assert ok


def test_criterion_3_lambda_gradients(criterion):
    rng = np.random.default_rng(7)
    scores, labels, ptr = random_groups(rng, 100, 5)
    grad, _ = lambda_gradients(scores, labels, ptr)
    w = swap_weights(scores, labels, ptr)
    fd = np.empty_like(scores)
    for i in range(len(scores)):
        up, down = scores.copy(), scores.copy()
        up[i] += 1e-6
        down[i] -= 1e-6
        fd[i] = (pairwise_surrogate_loss(up, labels, ptr, w) - pairwise_surrogate_loss(down, labels, ptr, w)) / 2e-6
    nz = np.abs(fd) > 1e-9
    rel = (np.abs(grad - fd)[nz] / np.abs(fd[nz])).max()
    # entries with no gradient (samples outside every weighted pair) must match too
    zero_ok = bool(np.all(np.abs(grad[~nz]) <= 1e-9))
    sums = np.add.reduceat(grad, ptr[:-1])
    scale = np.add.reduceat(np.abs(grad), ptr[:-1])
    # zero up to float accumulation (a few ulps of the group's gradient mass)
    sums_ok = bool(np.all(np.abs(sums) <= 1e-15 * np.maximum(scale, 1e-300)))
    ok = rel <= 1e-5 and zero_ok and sums_ok
    criterion(3, ok, f"max rel FD error {rel:.1e}; max |group sum| {np.abs(sums).max():.1e} "
                     f"({int((sums == 0).sum())}/100 exactly 0)")
    assert ok


def test_criterion_4_ranker_sanity(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    train, valid = separable(50, rng), separable(50, rng)
    model = fit_ranker(train, valid, dict(n_trees=200, learning_rate=0.1, min_samples_leaf=5), seed=0)
    hist = np.array(model.valid_history_)
    wall = time.perf_counter() - start
    argmax_ok = model.best_iteration_ == int(np.argmax(hist)) + 1 and len(model.trees_) <= 200
    ok = model.best_score_ >= 0.95 and argmax_ok and wall < 60
    criterion(4, ok, f"valid NDCG@10 {model.best_score_:.4f} at tree {model.best_iteration_}; "
                     f"argmax {argmax_ok}; {wall:.1f}s")
    assert ok


def test_criterion_5_linear_optimizer(criterion):
    rng = np.random.default_rng(5)
    n, size = 300, 100
    pos = rng.integers(0, size, n)
    labels = np.zeros((n, size))
    labels[np.arange(n), pos] = 1
    oracle = 0.5 * rng.random((n, size))
    oracle[np.arange(n), pos] = 1.0
    table = {"oracle": oracle, **{f"noise{k}": rng.random((n, size)) for k in range(3)}}
    _, objective = optimize_params(table, labels, rng.integers(1, 30, n), budget=100, seed=0)
    groups = [assign_group(L) for L in (4, 5, 8, 12)]
    groups_ok = groups == [ProfileGroup(0), ProfileGroup(1), ProfileGroup(2), ProfileGroup(3)]
    ok = objective >= 0.98 and groups_ok
    criterion(5, ok, f"optimized NDCG@10 {objective:.4f}; lengths 4/5/8/12 -> {[g.label for g in groups]}")
    assert ok


def test_criterion_6_pipeline_discipline(criterion, tmp_path):
    rng = np.random.default_rng(6)
    n_groups = 50
    y = np.zeros(n_groups * 10)
    y[np.arange(n_groups) * 10 + rng.integers(0, 10, n_groups)] = 1
    valid = RankingData(rng.normal(size=(len(y), 2)), y, np.repeat(np.arange(n_groups), 10))
    test = RankingData(rng.normal(size=(80, 2)), np.zeros(80), np.repeat(np.arange(8), 10))
    plan = make_cv_plan(np.arange(n_groups), k=5, seeds=(0, 1, 2))
    trained_on, constants = {}, []

    def fit(train, hold, hp, seed):
        trained_on[seed] = set(train.group.tolist())
        constants.append(float(seed))
        return seed

    violations = []

    def predict(seed, data):
        if data is not test:
            violations.extend(set(data.group.tolist()) & trained_on[seed])
        return np.full(data.X.shape[0], float(seed))

    res = cv_train_predict(valid, test, {}, plan, fit, predict)
    expected_oof = np.repeat(np.mean([plan.seeds[s] * 5 + plan.folds[s] for s in range(3)], axis=0), 10)
    oof_ok = not violations and np.array_equal(res.oof, expected_oof)
    mean_ok = res.n_models == 15 and np.all(res.test == sum(constants) / 15)

    subs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        if run == "a":
            assert main(["synth", "--out", str(tmp_path / "data"), "--users", "80", "--items", "300",
                         "--dim", "6", "--seed", "1"]) == 0
        (d / "c.json").write_text(json.dumps({
            "data_root": str(tmp_path / "data"), "output_dir": str(d / "out"), "targets": ["t1"],
            "combo_filter": "=t1,=s1-t1", "recommenders": ["TopPop", "ItemKNN", "EASE"],
            "budgets": {"stage1": 3, "stage2": 0, "stage3": 0, "linear": 5},
            "ranker": {"n_trees": 10, "min_samples_leaf": 20, "early_stopping_patience": 5}}))
        assert main(["run", "--config", str(d / "c.json")]) == 0
        subs.append((d / "out" / "submission_t1.tsv").read_bytes())
    bytes_ok = subs[0] == subs[1] and len(subs[0]) > 0
    ok = oof_ok and mean_ok and bytes_ok
    criterion(6, ok, f"OOF disjoint and decoded {oof_ok}; test = mean of 15 models {mean_ok}; "
                     f"identical submissions {bytes_ok}")
    assert ok


# scaled-down settings for the end-to-end run; see README
E2E_CONFIG = {
    "targets": ["t1"],
    "combo_filter": "=t1,=s1-t1,=s1-s2-s3-t1",
    "recommender_params": {"ALS": {"factors": 32, "iterations": 8}},
    "budgets": {"stage1": 8, "stage2": 0, "stage3": 0, "linear": 100},
    "ranker": {"n_trees": 120, "learning_rate": 0.15, "max_leaves": 15, "min_samples_leaf": 50,
               "feature_subsample": 0.6, "row_subsample": 0.6, "early_stopping_patience": 15},
}
FUSED = "s1-s2-s3-t1"


def test_criterion_7_end_to_end(criterion, tmp_path):
    start = time.perf_counter()
    assert main(["synth", "--out", str(tmp_path / "data"), "--users", "2000", "--items", "3000"]) == 0
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({"data_root": "data", "output_dir": "out", **E2E_CONFIG}))
    assert main(["run", "--config", str(cfg_path)]) == 0
    wall = time.perf_counter() - start

    report, splits = build_report(Runner(PipelineConfig.load(cfg_path)))
    assert splits == {"t1": "test"}
    stage1 = {(r.dataset, r.model): r.mean for r in report.rows
              if r.variant == "none" and not r.model.startswith("stage")}
    final = report.get("t1", "stage3").mean
    (best_ds, best_algo), best = max(stage1.items(), key=lambda kv: kv[1])
    fused_algo = max((a for d, a in stage1 if d == FUSED), key=lambda a: stage1[(FUSED, a)])
    margin = stage1[(FUSED, fused_algo)] - stage1[("t1", fused_algo)]
    ok = final >= best - 0.005 and margin >= 0.01 and wall < 900
    criterion(7, ok, f"stage-3 {final:.4f} vs best stage-1 {best:.4f} ({best_algo} on {best_ds}); "
                     f"fusion margin {margin:+.4f} ({fused_algo}); {wall:.0f}s")
    assert ok


def test_criterion_8_fusion_arithmetic(criterion):
    def bundle(train, core=()):
        return MarketBundle("t1", build_store(train), build_store(core), [], [], {})

    t1 = MarketCombo((), ("t1",))
    dedup = fuse(t1, {"t1": bundle([("u", "a", 3.0), ("u", "a", 5.0)])}).store.matrix[0, 0]
    unit = fuse(t1, {"t1": bundle([("u", "x", 2.0)], [("u", "b", 1.0)])}).store
    substituted = unit.matrix[unit.user_map.index("u"), unit.item_map.index("b")]
    combos = enumerate_combos()
    per_target = [len(combos_with_target(combos, t)) for t in TARGET_MARKETS]
    ok = dedup == 4.0 and substituted == UNIT_RATING_SUBSTITUTE == 4.0 and len(combos) == 24 \
        and per_target == [16, 16]
    criterion(8, ok, f"dedup {{3,5}} -> {dedup}; unit -> {substituted}; {len(combos)} combos; "
                     f"per target {per_target}")
    assert ok


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

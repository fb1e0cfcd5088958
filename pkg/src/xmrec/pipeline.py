"""Stages 2 and 3: feature assembly, grouped cross-validated boosting, stacking.

Stage 1 produces, per dataset and recommender, a (n_slates, 100) score
matrix for the validation and test slates of each target market. Stage 2
turns those into per-candidate feature rows, fits the linear ensemble and
three boosted rankers (one per normalization variant) with out-of-fold
predictions on validation. Stage 3 concatenates everything the datasets
containing a target produced and boosts once more.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .io import CandidateSlate, InteractionStore
from .linear import LinearEnsemble, normalize_minmax_userwise
from .metrics import grouped_ndcg, positive_rank_ndcg, tie_break
from .ranker import RankingData, fit_ranker, predict
from .recommenders import ALS, SEARCH_SPACES, ConvergenceError, Recommender, make_recommender
from .tuner import Param, SearchSpace, run_search

logger = logging.getLogger(__name__)

VARIANTS = ("none", "minmax", "both")
STAGE3_VARIANT = "none"
FACTOR_DIM = 12
FINAL_FACTOR_DIM = 16
FACTOR_ALS = dict(reg=0.01, conf_alpha=10.0, iterations=15)

RANKER_SPACE = SearchSpace([
    Param("learning_rate", "log-real", 0.02, 0.3),
    Param("max_leaves", "log-int", 4, 64),
    Param("min_samples_leaf", "log-int", 5, 400),
    Param("l2_leaf_reg", "log-real", 0.1, 10.0),
    Param("feature_subsample", "real", 0.3, 1.0),
    Param("row_subsample", "real", 0.5, 1.0),
])

__all__ = [
    "CvPlan", "CvResult", "DatasetOutputs", "FeatureSpec", "FinalResult", "SlateBatch", "Stage2Output",
    "VARIANTS", "assemble_features", "cv_train_predict", "dataset_factors", "final_stack",
    "make_cv_plan", "score_table", "stage2", "tie_break", "tune_cv", "tune_recommender",
]


# --------------------------------------------------------------------------- slates and features

@dataclass(frozen=True)
class SlateBatch:
    """One market's slates as arrays: user tokens, (n, 100) item tokens, optional labels."""

    users: tuple[str, ...]
    items: np.ndarray
    labels: np.ndarray | None = None

    @classmethod
    def from_slates(cls, slates: Sequence[CandidateSlate], qrels: Mapping[str, str] | None = None):
        if not slates:
            raise ValueError("no slates")
        sizes = {len(s.candidates) for s in slates}
        if len(sizes) != 1:
            raise ValueError("slates of unequal size")
        users = tuple(s.user_id for s in slates)
        items = np.array([s.candidates for s in slates], dtype=object)
        labels = None
        positives = [qrels.get(s.user_id) if qrels is not None else s.positive for s in slates]
        if all(p is not None for p in positives):
            labels = (items == np.array(positives, dtype=object)[:, None]).astype(np.float64)
            if np.any(labels.sum(axis=1) != 1):
                raise ValueError("every labelled slate needs its positive among the candidates")
        return cls(users, items, labels)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def slate_size(self) -> int:
        return self.items.shape[1]

    @property
    def positive_index(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("slates carry no positives")
        return self.labels.argmax(axis=1)

    @property
    def group(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.slate_size)

    def flat_labels(self) -> np.ndarray:
        return np.zeros(self.items.size) if self.labels is None else self.labels.ravel()


def score_table(model: Recommender, store: InteractionStore, batch: SlateBatch) -> np.ndarray:
    """(n_slates, slate_size) scores of a fitted recommender; cold items get 0."""
    if hasattr(model, "score_tokens"):
        return model.score_tokens(batch.users, batch.items)
    users = store.user_map.indices(batch.users)
    if np.any(users < 0):
        raise KeyError(f"slate user {batch.users[int(np.argmin(users))]} is not in the dataset")
    items = store.item_map.indices(batch.items.ravel()).reshape(batch.items.shape)
    return model.score_slates(users, items)


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered feature names with a provenance tag per column."""

    names: tuple[str, ...]
    provenance: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != len(self.provenance):
            raise ValueError("one provenance tag per feature required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")

    @property
    def width(self) -> int:
        return len(self.names)

    def __add__(self, other: "FeatureSpec") -> "FeatureSpec":
        return FeatureSpec(self.names + other.names, self.provenance + other.provenance)

    def prefixed(self, prefix: str) -> "FeatureSpec":
        return FeatureSpec(tuple(prefix + n for n in self.names), self.provenance)

    @property
    def schema_hash(self) -> str:
        text = "\n".join(f"{n}\t{p}" for n, p in zip(self.names, self.provenance))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _l2_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = m / norms
    out[norms[:, 0] == 0] = np.nan
    return out


def dataset_factors(store: InteractionStore, dim: int = FACTOR_DIM, seed: int = 0):
    """L2-normalized ALS user and item vectors; entities without interactions are NaN."""
    dim = min(dim, store.n_users, store.n_items)
    als = ALS(factors=dim, random_state=seed, **FACTOR_ALS).fit(store)
    return _l2_rows(als.user_factors_), _l2_rows(als.item_factors_)


def _entity_stats(store: InteractionStore):
    X = store.matrix
    ucount = np.diff(X.indptr).astype(np.float64)
    usum = np.asarray(X.sum(axis=1)).ravel()
    icount = np.bincount(X.indices, minlength=store.n_items).astype(np.float64)
    isum = np.bincount(X.indices, weights=X.data, minlength=store.n_items)
    with np.errstate(invalid="ignore", divide="ignore"):
        return ucount, usum / ucount, icount, isum / icount


def _lookup(values: np.ndarray, idx: np.ndarray, missing: float) -> np.ndarray:
    out = np.full(idx.shape + values.shape[1:], missing, dtype=np.float64)
    known = idx >= 0
    out[known] = values[idx[known]]
    return out


def stats_features(store: InteractionStore, batch: SlateBatch, prefix: str = ""):
    """User, item and dataset statistics for every (slate, candidate) row."""
    ucount, umean, icount, imean = _entity_stats(store)
    u = store.user_map.indices(batch.users)
    i = store.item_map.indices(batch.items.ravel())
    u_rows = np.repeat(u, batch.slate_size)
    density = store.nnz / max(1, store.n_users * store.n_items)
    n = batch.items.size
    cols = [
        (_lookup(ucount, u_rows, 0.0), "user_profile_length", "user-stat"),
        (_lookup(umean, u_rows, np.nan), "user_mean_rating", "user-stat"),
        (_lookup(icount, i, 0.0), "item_popularity", "item-stat"),
        (_lookup(imean, i, np.nan), "item_mean_rating", "item-stat"),
        (np.full(n, float(store.n_users)), "n_users", "dataset-stat"),
        (np.full(n, float(store.n_items)), "n_items", "dataset-stat"),
        (np.full(n, density), "density", "dataset-stat"),
    ]
    X = np.column_stack([c[0] for c in cols])
    spec = FeatureSpec(tuple(prefix + c[1] for c in cols), tuple(c[2] for c in cols))
    return X, spec


def factor_features(store: InteractionStore, batch: SlateBatch, factors, prefix: str = ""):
    users_f, items_f = factors
    u = np.repeat(store.user_map.indices(batch.users), batch.slate_size)
    i = store.item_map.indices(batch.items.ravel())
    uf, itf = _lookup(users_f, u, np.nan), _lookup(items_f, i, np.nan)
    d_u, d_i = users_f.shape[1], items_f.shape[1]
    spec = FeatureSpec(tuple(f"{prefix}user_factor_{k}" for k in range(d_u))
                       + tuple(f"{prefix}item_factor_{k}" for k in range(d_i)),
                       ("user-factor",) * d_u + ("item-factor",) * d_i)
    return np.hstack([uf, itf]), spec


def score_features(scores: Mapping[str, np.ndarray], variant: str, recommenders: Sequence[str],
                   prefix: str = ""):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    missing = [r for r in recommenders if r not in scores]
    if missing:
        raise KeyError(f"no stage-1 scores for recommender(s): {', '.join(missing)}")
    cols, names, tags = [], [], []
    if variant in ("none", "both"):
        for r in recommenders:
            cols.append(np.asarray(scores[r], dtype=np.float64).ravel())
            names.append(f"{prefix}score:{r}")
            tags.append("score:none")
    if variant in ("minmax", "both"):
        for r in recommenders:
            cols.append(normalize_minmax_userwise(scores[r]).ravel())
            names.append(f"{prefix}score_mm:{r}")
            tags.append("score:minmax")
    return np.column_stack(cols), FeatureSpec(tuple(names), tuple(tags))


def assemble_features(store: InteractionStore, batch: SlateBatch, scores: Mapping[str, np.ndarray],
                      variant: str, recommenders: Sequence[str] | None = None, factors=None,
                      factor_dim: int = FACTOR_DIM, prefix: str = ""):
    """One row per (slate, candidate): stage-1 scores, statistics and latent factors.

    ``factors`` is a ``(users, items)`` pair from :func:`dataset_factors`;
    it is computed when absent. Returns ``(RankingData, FeatureSpec)``.
    """
    recommenders = sorted(scores) if recommenders is None else list(recommenders)
    if factors is None:
        factors = dataset_factors(store, factor_dim)
    parts = [score_features(scores, variant, recommenders, prefix),
             stats_features(store, batch, prefix),
             factor_features(store, batch, factors, prefix)]
    X = np.hstack([p[0] for p in parts])
    spec = parts[0][1] + parts[1][1] + parts[2][1]
    return RankingData(X, batch.flat_labels(), batch.group, spec.names), spec


# --------------------------------------------------------------------------- cross-validation

@dataclass(frozen=True)
class CvPlan:
    """Fold of every group, one row per seed."""

    k: int
    seeds: tuple[int, ...]
    groups: np.ndarray
    folds: np.ndarray  # (n_seeds, n_groups)

    def fold_of(self, seed_index: int) -> np.ndarray:
        return self.folds[seed_index]


def make_cv_plan(group_ids, k: int = 5, seeds: Sequence[int] = (0, 1, 2)) -> CvPlan:
    """Seeded uniform partition of the distinct groups into ``k`` folds per seed."""
    groups = np.asarray(list(dict.fromkeys(np.asarray(group_ids).tolist())))
    seeds = tuple(int(s) for s in seeds)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(groups) < k:
        raise ValueError(f"{len(groups)} groups cannot fill {k} folds")
    if not seeds or len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be non-empty and distinct")
    folds = np.empty((len(seeds), len(groups)), dtype=np.int64)
    for s, seed in enumerate(seeds):
        perm = np.random.default_rng(seed).permutation(len(groups))
        folds[s, perm] = np.arange(len(groups)) % k
    return CvPlan(k, seeds, groups, folds)


@dataclass
class CvResult:
    oof: np.ndarray
    test: np.ndarray
    fold_ndcg: list[float]
    hp: dict
    n_models: int

    @property
    def cv_ndcg(self) -> float:
        return float(np.mean(self.fold_ndcg))


FitFn = Callable[[RankingData, RankingData, dict, int], object]
PredictFn = Callable[[object, RankingData], np.ndarray]


def _group_folds(data: RankingData, plan: CvPlan, seed_index: int) -> np.ndarray:
    ptr = data.group_ptr
    ids = data.group[ptr[:-1]]
    lookup = dict(zip(plan.groups.tolist(), plan.fold_of(seed_index).tolist()))
    try:
        return np.array([lookup[g] for g in ids.tolist()])
    except KeyError as e:
        raise KeyError(f"group {e.args[0]} is not in the CV plan") from None


def cv_train_predict(valid: RankingData, test: RankingData, hp: dict, plan: CvPlan,
                     fit_fn: FitFn = fit_ranker, predict_fn: PredictFn = predict, k: int = 10) -> CvResult:
    """Out-of-fold validation predictions and fold-averaged test predictions.

    For every seed and fold a ranker is fit on the other folds (early
    stopping on the held-out fold), predicts its held-out groups and the
    whole test set. OOF values are averaged over seeds and test values over
    all ``k * n_seeds`` models.
    """
    ptr = valid.group_ptr
    sizes = np.diff(ptr)
    if valid.y.size and np.any(np.add.reduceat(valid.y, ptr[:-1]) < 1):
        raise ValueError("every validation group needs its positive label")
    oof = np.zeros(valid.y.size)
    test_sum = np.zeros(test.X.shape[0])
    fold_ndcg = []
    n_models = 0
    for s in range(len(plan.seeds)):
        group_fold = _group_folds(valid, plan, s)
        row_fold = np.repeat(group_fold, sizes)
        for f in range(plan.k):
            held = group_fold == f
            train, hold = valid.subset_groups(~held), valid.subset_groups(held)
            model = fit_fn(train, hold, dict(hp), plan.seeds[s] * plan.k + f)
            pred = np.asarray(predict_fn(model, hold), dtype=np.float64)
            oof[row_fold == f] += pred
            test_sum += np.asarray(predict_fn(model, test), dtype=np.float64)
            fold_ndcg.append(float(grouped_ndcg(pred, hold.y, hold.group_ptr, k).mean()))
            n_models += 1
    return CvResult(oof / len(plan.seeds), test_sum / n_models, fold_ndcg, dict(hp), n_models)


def tune_cv(valid: RankingData, test: RankingData, plan: CvPlan, base_hp: dict, budget: int = 0,
            space: SearchSpace = RANKER_SPACE, seed: int = 0, fit_fn: FitFn = fit_ranker,
            predict_fn: PredictFn = predict, journal=None) -> CvResult:
    """Pick ranker hyperparameters by mean CV NDCG@10; budget 0 keeps ``base_hp``."""
    if budget <= 0:
        return cv_train_predict(valid, test, base_hp, plan, fit_fn, predict_fn)
    best: list[CvResult] = []

    def objective(config):
        res = cv_train_predict(valid, test, {**base_hp, **config}, plan, fit_fn, predict_fn)
        if not best or res.cv_ndcg > best[0].cv_ndcg:
            best[:] = [res]
        return res.cv_ndcg

    trials = run_search(space, objective, budget, seed=seed, journal=journal)
    if not best:
        # every trial was replayed from the journal: refit the recorded best
        top = max(trials, key=lambda t: t.objective)
        return cv_train_predict(valid, test, {**base_hp, **top.config}, plan, fit_fn, predict_fn)
    return best[0]


# --------------------------------------------------------------------------- stage 1 helper

def tune_recommender(algorithm: str, store: InteractionStore, valid: Mapping[str, SlateBatch],
                     test: Mapping[str, SlateBatch], budget: int, seed: int = 0, params: dict | None = None,
                     k: int = 10, journal=None):
    """Search an algorithm's hyperparameters on validation NDCG, pooled over target markets.

    Entries of ``params`` are held fixed and not searched. Returns
    ``(config, objective, valid_tables, test_tables)`` where the tables map
    a market id to its (n_slates, slate_size) score matrix.
    """
    fixed = dict(params or {})
    # fixed parameters are taken out of the search
    space = SearchSpace([p for p in SEARCH_SPACES[algorithm].params if p.name not in fixed])
    best: dict = {}

    def run(config):
        try:
            model = make_recommender(algorithm, **fixed, **config).fit(store)
        except ConvergenceError as e:
            logger.warning("%s %s: %s; trial scored -inf", algorithm, config, e)
            return -np.inf
        v = {m: score_table(model, store, b) for m, b in valid.items()}
        ndcg = np.concatenate([positive_rank_ndcg(v[m], b.positive_index, k) for m, b in valid.items()])
        value = float(ndcg.mean())
        if not best or value > best["objective"]:
            t = {m: score_table(model, store, b) for m, b in test.items()}
            best.update(config=dict(config), objective=value, valid=v, test=t)
        return value

    if len(space) == 0:
        run({})
    else:
        trials = run_search(space, run, budget, seed=seed, journal=journal)
        if not best:
            run(max(trials, key=lambda t: t.objective).config)
    if not best:
        raise ConvergenceError(f"no {algorithm} configuration converged", np.inf)
    return best["config"], best["objective"], best["valid"], best["test"]


# --------------------------------------------------------------------------- stage 2

@dataclass
class Stage2Output:
    """Per (dataset, target market): linear and boosted predictions on valid (OOF) and test."""

    linear_valid: np.ndarray
    linear_test: np.ndarray
    boosted_valid: dict[str, np.ndarray]
    boosted_test: dict[str, np.ndarray]
    cv_ndcg: dict[str, float] = field(default_factory=dict)
    hp: dict[str, dict] = field(default_factory=dict)

    def columns(self, split: str) -> dict[str, np.ndarray]:
        lin = self.linear_valid if split == "valid" else self.linear_test
        boosted = self.boosted_valid if split == "valid" else self.boosted_test
        out = {"stage2:linear": lin.ravel()}
        for v in VARIANTS:
            out[f"stage2:boosted_{v}"] = boosted[v]
        return out


def stage2(store: InteractionStore, valid: SlateBatch, test: SlateBatch,
           valid_scores: Mapping[str, np.ndarray], test_scores: Mapping[str, np.ndarray], plan: CvPlan,
           ranker_hp: dict, budget: int = 0, linear_budget: int = 100, seed: int = 0,
           factors=None, fit_fn: FitFn = fit_ranker, predict_fn: PredictFn = predict) -> Stage2Output:
    recommenders = sorted(valid_scores)
    profile = _profile_lengths(store, valid)
    lin = LinearEnsemble(budget=linear_budget, seed=seed).fit(
        {r: valid_scores[r] for r in recommenders}, valid.labels, profile)
    linear_valid = lin.predict({r: valid_scores[r] for r in recommenders}, profile)
    linear_test = lin.predict({r: test_scores[r] for r in recommenders}, _profile_lengths(store, test))
    if factors is None:
        factors = dataset_factors(store, FACTOR_DIM, seed)
    out = Stage2Output(linear_valid, linear_test, {}, {}, {"linear": lin.objective_})
    for variant in VARIANTS:
        vdata, spec = assemble_features(store, valid, valid_scores, variant, recommenders, factors)
        tdata, tspec = assemble_features(store, test, test_scores, variant, recommenders, factors)
        if spec.schema_hash != tspec.schema_hash:
            raise RuntimeError("validation and test feature schemas differ")
        res = tune_cv(vdata, tdata, plan, ranker_hp, budget, seed=seed, fit_fn=fit_fn, predict_fn=predict_fn)
        out.boosted_valid[variant] = res.oof
        out.boosted_test[variant] = res.test
        out.cv_ndcg[f"boosted_{variant}"] = res.cv_ndcg
        out.hp[variant] = res.hp
        logger.info("stage 2 %s: CV NDCG %.5f", variant, res.cv_ndcg)
    return out


def _profile_lengths(store: InteractionStore, batch: SlateBatch) -> np.ndarray:
    u = store.user_map.indices(batch.users)
    lengths = np.diff(store.matrix.indptr)
    return np.where(u >= 0, lengths[np.maximum(u, 0)], 0)


# --------------------------------------------------------------------------- stage 3

@dataclass
class DatasetOutputs:
    """Everything stage 3 needs from one dataset for one target market."""

    store: InteractionStore
    valid_scores: Mapping[str, np.ndarray]
    test_scores: Mapping[str, np.ndarray]
    stage2: Stage2Output


@dataclass
class FinalResult:
    test_scores: np.ndarray  # (n_slates, slate_size)
    linear_test: np.ndarray
    valid_oof: np.ndarray
    cv_ndcg: float
    spec: FeatureSpec
    hp: dict


def _entity_stats_only(store: InteractionStore, batch: SlateBatch, prefix: str):
    # dataset-level statistics are constant over a stage-3 table
    X, spec = stats_features(store, batch, prefix)
    keep = [j for j, tag in enumerate(spec.provenance) if tag != "dataset-stat"]
    return X[:, keep], FeatureSpec(tuple(spec.names[j] for j in keep), tuple(spec.provenance[j] for j in keep))


def stage3_features(target_store: InteractionStore, batch: SlateBatch,
                    outputs: Mapping[str, DatasetOutputs], split: str, factors):
    parts = [_entity_stats_only(target_store, batch, "target/"),
             factor_features(target_store, batch, factors, "target/")]
    for combo_id in sorted(outputs):
        o = outputs[combo_id]
        scores = o.valid_scores if split == "valid" else o.test_scores
        prefix = f"{combo_id}/"
        parts.append(score_features(scores, STAGE3_VARIANT, sorted(scores), prefix))
        parts.append(_entity_stats_only(o.store, batch, prefix))
        cols = o.stage2.columns(split)
        parts.append((np.column_stack(list(cols.values())),
                      FeatureSpec(tuple(prefix + c for c in cols), ("stage2",) * len(cols))))
    X = np.hstack([p[0] for p in parts])
    spec = parts[0][1]
    for p in parts[1:]:
        spec = spec + p[1]
    return RankingData(X, batch.flat_labels(), batch.group, spec.names), spec


def final_stack(target: str, outputs: Mapping[str, DatasetOutputs], required: Sequence[str],
                target_store: InteractionStore, valid: SlateBatch, test: SlateBatch, plan: CvPlan,
                ranker_hp: dict, budget: int = 0, linear_budget: int = 100, seed: int = 0,
                fit_fn: FitFn = fit_ranker, predict_fn: PredictFn = predict) -> FinalResult:
    """Boost on the concatenated features of every dataset that contains ``target``.

    ``target_store`` is the target-only dataset, the source of the target
    statistics and the 16-dimensional factors. The last-level linear
    ensemble (one unit per dataset, fed the stage-2 linear predictions)
    supplies the tie-break scores.
    """
    absent = [c for c in required if c not in outputs]
    if absent:
        raise KeyError(f"stage-2 outputs missing for {target}: {', '.join(absent)}")
    outputs = {c: outputs[c] for c in required}
    factors = dataset_factors(target_store, FINAL_FACTOR_DIM, seed)
    vdata, spec = stage3_features(target_store, valid, outputs, "valid", factors)
    tdata, tspec = stage3_features(target_store, test, outputs, "test", factors)
    if spec.schema_hash != tspec.schema_hash:
        raise RuntimeError("validation and test feature schemas differ")
    res = tune_cv(vdata, tdata, plan, ranker_hp, budget, seed=seed, fit_fn=fit_fn, predict_fn=predict_fn)

    profile_v = _profile_lengths(target_store, valid)
    profile_t = _profile_lengths(target_store, test)
    lin = LinearEnsemble(budget=linear_budget, seed=seed).fit(
        {c: o.stage2.linear_valid for c, o in outputs.items()}, valid.labels, profile_v)
    linear_test = lin.predict({c: o.stage2.linear_test for c, o in outputs.items()}, profile_t)
    shape = (len(test), test.slate_size)
    return FinalResult(res.test.reshape(shape), linear_test, res.oof.reshape(len(valid), -1),
                       res.cv_ndcg, spec, res.hp)


def feature_table_tsv(data: RankingData, spec: FeatureSpec, users: Sequence[str], items: np.ndarray) -> str:
    """Feature rows as TSV; the first line records the schema hash."""
    lines = [f"#schema\t{spec.schema_hash}", "\t".join(("user", "item", "label") + spec.names)]
    flat_items = items.ravel()
    slate = items.shape[1]
    for r in range(data.X.shape[0]):
        vals = "\t".join(repr(float(x)) for x in data.X[r])
        lines.append(f"{users[r // slate]}\t{flat_items[r]}\t{int(data.y[r])}\t{vals}")
    return "\n".join(lines) + "\n"


def read_schema_hash(text: str) -> str:
    first = text.split("\n", 1)[0]
    tag, _, digest = first.partition("\t")
    if tag != "#schema":
        raise ValueError("feature table lacks a schema header")
    return digest


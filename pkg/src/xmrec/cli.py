"""``xmrec``: stage-by-stage batch driver with a content-addressed cache.

Every artifact is keyed by a hash of its inputs (market file bytes for the
fused datasets, upstream keys plus settings for later stages), written
atomically, and logged to a journal. Rerunning a command only recomputes
artifacts whose key changed.
"""
from __future__ import annotations

import argparse
import hashlib
import io as _io
import json
import logging
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .fusion import (UNIT_RATING_SUBSTITUTE, FusedDataset, MarketCombo, enumerate_combos, filter_combos,
                     fuse, load_fused, save_fused)
from .io import (MARKETS, SOURCE_MARKETS, TARGET_MARKETS, FormatError, MarketBundle, ScoredSlate,
                 atomic_write_text, load_market, write_submission)
from .metrics import EvalReport, evaluate_run
from .pipeline import (CvPlan, DatasetOutputs, SlateBatch, Stage2Output, VARIANTS, final_stack, make_cv_plan,
                       stage2, tune_recommender)
from .recommenders import ALGORITHMS
from .synth import GROUND_TRUTH_FILE, SynthConfig, write_synthetic

logger = logging.getLogger("xmrec")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_MISSING_DEPENDENCY = 4
EXIT_FORMAT = 5

CACHE_ENV = "XMREC_CACHE_DIR"
DEFAULT_RECOMMENDERS = ("TopPop", "ItemKNN", "UserKNN", "P3alpha", "RP3beta", "PureSVD", "SLIM", "EASE", "ALS")
DEFAULT_BUDGETS = {"stage1": 50, "stage2": 100, "stage3": 100, "linear": 100}


class ConfigError(ValueError):
    pass


class MissingDependency(RuntimeError):
    """A command needs artifacts an earlier stage has not produced."""


@dataclass
class PipelineConfig:
    data_root: Path
    output_dir: Path
    cache_dir: Path
    sources: tuple[str, ...] = SOURCE_MARKETS
    targets: tuple[str, ...] = TARGET_MARKETS
    combo_filter: str = "*"
    recommenders: tuple[str, ...] = DEFAULT_RECOMMENDERS
    recommender_params: dict = field(default_factory=dict)
    budgets: dict = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    ranker: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = (0, 1, 2)
    folds: int = 5
    k: int = 10
    unit_rating: float = UNIT_RATING_SUBSTITUTE

    def __post_init__(self):
        self.sources, self.targets = tuple(self.sources), tuple(self.targets)
        self.recommenders, self.seeds = tuple(self.recommenders), tuple(int(s) for s in self.seeds)
        self.budgets = {**DEFAULT_BUDGETS, **self.budgets}
        unknown = [m for m in self.sources + self.targets if m not in MARKETS]
        if unknown:
            raise ConfigError(f"unknown market(s): {', '.join(unknown)}")
        if not self.targets:
            raise ConfigError("at least one target market is required")
        bad = [r for r in self.recommenders if r not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown recommender(s): {', '.join(bad)}")
        if not self.recommenders:
            raise ConfigError("at least one recommender is required")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be non-empty and distinct")
        if any(int(v) < 0 for v in self.budgets.values()):
            raise ConfigError("budgets must be >= 0")
        if self.folds < 2 or self.k < 1:
            raise ConfigError("folds >= 2 and k >= 1 required")
        try:
            filter_combos([], self.combo_filter)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "PipelineConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(raw) - known)
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(extra)}")
        for key in ("data_root", "output_dir"):
            if key not in raw:
                raise ConfigError(f"config lacks {key!r}")
        raw.setdefault("cache_dir", Path(raw["output_dir"]) / "cache")
        for key in ("data_root", "output_dir", "cache_dir"):
            raw[key] = (base / raw[key]).resolve()
        if os.environ.get(CACHE_ENV):
            raw["cache_dir"] = Path(os.environ[CACHE_ENV]).resolve()
        try:
            return cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(str(path))
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw, path.parent)

    @property
    def markets(self) -> tuple[str, ...]:
        return self.sources + self.targets

    def combos(self) -> list[MarketCombo]:
        return filter_combos(enumerate_combos(self.sources, self.targets), self.combo_filter)

    def params_for(self, algorithm: str) -> dict:
        params = dict(self.recommender_params.get(algorithm, {}))
        if algorithm == "Oracle":
            params.setdefault("truth_path", str(self.data_root / GROUND_TRUTH_FILE))
        return params


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _save_npz(path: Path, arrays: dict, meta: dict) -> None:
    """Arrays then metadata, each via temp-file-and-rename; the metadata marks completion."""
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    atomic_write_text(path.with_suffix(".json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _read_meta(path: Path) -> dict | None:
    meta_path = path.with_suffix(".json")
    if not (path.exists() and meta_path.exists()):
        return None
    try:
        return json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None


class Runner:
    """Shared state of one invocation: config, loaded markets, cache paths, journal."""

    def __init__(self, cfg: PipelineConfig, jobs: int = 1):
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.cache = cfg.cache_dir
        self._bundles: dict[str, MarketBundle] = {}
        self._batches: dict[tuple[str, str], SlateBatch] = {}
        self._lock = threading.Lock()
        self.counts: dict[str, int] = {}

    # ------------------------------------------------------------------ bookkeeping
    def journal(self, stage: str, artifact: str, status: str, wall: float, objective=None) -> None:
        obj = "" if objective is None else f"{objective:.6f}"
        line = f"{time.strftime('%Y-%m-%dT%H:%M:%S')}\t{stage}\t{artifact}\t{status}\t{wall:.2f}\t{obj}\n"
        with self._lock:
            self.counts[f"{stage}:{status}"] = self.counts.get(f"{stage}:{status}", 0) + 1
            self.cache.mkdir(parents=True, exist_ok=True)
            with open(self.cache / "journal.tsv", "a", encoding="utf-8") as fh:
                fh.write(line)
        logger.info("%s %s: %s (%.2fs)%s", stage, artifact, status, wall, f" objective {obj}" if obj else "")

    def _map(self, fn: Callable, items: Sequence):
        if self.jobs == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))

    # ------------------------------------------------------------------ inputs
    def bundle(self, market: str) -> MarketBundle:
        if market not in self._bundles:
            self._bundles[market] = load_market(self.cfg.data_root, market)
        return self._bundles[market]

    def market_digest(self, market: str) -> str:
        d = self.cfg.data_root / market
        if not d.is_dir():
            raise FileNotFoundError(str(d))
        return _digest({p.name: _file_digest(p) for p in sorted(d.iterdir()) if p.is_file()})

    def batch(self, target: str, split: str) -> SlateBatch:
        key = (target, split)
        if key not in self._batches:
            b = self.bundle(target)
            if split == "valid":
                self._batches[key] = SlateBatch.from_slates(b.valid_slates)
            else:
                if not b.test_slates:
                    raise FileNotFoundError(str(self.cfg.data_root / target / "test_run.tsv"))
                self._batches[key] = SlateBatch.from_slates(b.test_slates, b.test_qrels or None)
        return self._batches[key]

    # ------------------------------------------------------------------ fused datasets
    def fused_key(self, combo: MarketCombo) -> str:
        return _digest({"combo": combo.id, "markets": {m: self.market_digest(m) for m in combo.markets},
                        "unit_rating": self.cfg.unit_rating})

    def fused_dir(self, combo: MarketCombo) -> Path:
        return self.cache / "fused" / combo.id

    def prepare(self, combo: MarketCombo) -> str:
        key = self.fused_key(combo)
        d = self.fused_dir(combo)
        meta = d / "meta.json"
        if meta.exists() and json.loads(meta.read_text()).get("key") == key:
            self.journal("prepare", combo.id, "hit", 0.0)
            return key
        t = time.time()
        ds = fuse(combo, {m: self.bundle(m) for m in combo.markets}, self.cfg.unit_rating)
        save_fused(ds, d)
        atomic_write_text(meta, json.dumps({"key": key, "n_users": ds.store.n_users,
                                            "n_items": ds.store.n_items, "nnz": ds.store.nnz}) + "\n")
        self.journal("prepare", combo.id, "fused", time.time() - t)
        return key

    def load_dataset(self, combo: MarketCombo, allow_fuse: bool = False) -> tuple[FusedDataset, str]:
        d = self.fused_dir(combo)
        meta = d / "meta.json"
        key = self.fused_key(combo)
        if meta.exists() and json.loads(meta.read_text()).get("key") == key:
            return load_fused(d, combo), key
        if allow_fuse:
            return fuse(combo, {m: self.bundle(m) for m in combo.markets}, self.cfg.unit_rating), key
        raise MissingDependency(f"fused dataset {combo.id} is missing or stale; run 'prepare'")

    # ------------------------------------------------------------------ stage 1
    def stage1_path(self, combo: MarketCombo, algorithm: str) -> Path:
        return self.cache / "stage1" / combo.id / f"{algorithm}.npz"

    def stage1_key(self, combo: MarketCombo, algorithm: str, fused_key: str) -> str:
        c = self.cfg
        return _digest({"fused": fused_key, "algorithm": algorithm, "params": c.params_for(algorithm),
                        "budget": c.budgets["stage1"], "seed": c.seeds[0], "k": c.k,
                        "targets": list(combo.targets)})

    def stage1(self, combo: MarketCombo, algorithm: str, ds: FusedDataset, fused_key: str) -> str:
        path = self.stage1_path(combo, algorithm)
        key = self.stage1_key(combo, algorithm, fused_key)
        meta = _read_meta(path)
        if meta and meta.get("key") == key:
            self.journal("stage1", f"{combo.id}/{algorithm}", "hit", 0.0, meta.get("objective"))
            return key
        t = time.time()
        targets = list(combo.targets)
        valid = {m: self.batch(m, "valid") for m in targets}
        test = {m: self.batch(m, "test") for m in targets}
        journal = path.with_name(f"{algorithm}.{key[:12]}.trials.tsv")
        config, objective, vt, tt = tune_recommender(
            algorithm, ds.store, valid, test, self.cfg.budgets["stage1"], self.cfg.seeds[0],
            self.cfg.params_for(algorithm), self.cfg.k, journal=journal)
        arrays = {f"valid_{m}": vt[m] for m in targets} | {f"test_{m}": tt[m] for m in targets}
        _save_npz(path, arrays, {"key": key, "config": config, "objective": objective})
        self.journal("stage1", f"{combo.id}/{algorithm}", "computed", time.time() - t, objective)
        return key

    def stage1_tables(self, combo: MarketCombo, target: str):
        """(valid, test) score tables by algorithm plus their cache keys."""
        valid, test, keys = {}, {}, {}
        missing = []
        for algorithm in self.cfg.recommenders:
            path = self.stage1_path(combo, algorithm)
            meta = _read_meta(path)
            if meta is None:
                missing.append(f"{combo.id}/{algorithm}")
                continue
            with np.load(path) as z:
                valid[algorithm] = z[f"valid_{target}"]
                test[algorithm] = z[f"test_{target}"]
            keys[algorithm] = meta["key"]
        if missing:
            raise MissingDependency(f"stage-1 artifacts missing: {', '.join(missing)}; run 'stage1'")
        return valid, test, keys

    # ------------------------------------------------------------------ stage 2
    def plan(self, target: str) -> CvPlan:
        return make_cv_plan(np.arange(len(self.batch(target, "valid"))), self.cfg.folds, self.cfg.seeds)

    def stage2_path(self, combo: MarketCombo, target: str) -> Path:
        return self.cache / "stage2" / combo.id / f"{target}.npz"

    def stage2(self, combo: MarketCombo, target: str) -> str:
        ds, _ = self.load_dataset(combo)
        valid_s, test_s, keys = self.stage1_tables(combo, target)
        c = self.cfg
        key = _digest({"stage1": keys, "target": target, "ranker": c.ranker, "budget": c.budgets["stage2"],
                       "linear": c.budgets["linear"], "seeds": c.seeds, "folds": c.folds, "k": c.k})
        path = self.stage2_path(combo, target)
        meta = _read_meta(path)
        artifact = f"{combo.id}/{target}"
        if meta and meta.get("key") == key:
            self.journal("stage2", artifact, "hit", 0.0, meta.get("objective"))
            return key
        t = time.time()
        out = stage2(ds.store, self.batch(target, "valid"), self.batch(target, "test"), valid_s, test_s,
                     self.plan(target), c.ranker, c.budgets["stage2"], c.budgets["linear"], c.seeds[0])
        arrays = {"linear_valid": out.linear_valid, "linear_test": out.linear_test}
        for v in VARIANTS:
            arrays[f"boosted_valid_{v}"] = out.boosted_valid[v]
            arrays[f"boosted_test_{v}"] = out.boosted_test[v]
        objective = max(out.cv_ndcg.values())
        _save_npz(path, arrays, {"key": key, "cv_ndcg": out.cv_ndcg, "hp": out.hp, "objective": objective})
        self.journal("stage2", artifact, "computed", time.time() - t, objective)
        return key

    def stage2_output(self, combo: MarketCombo, target: str) -> tuple[Stage2Output, str] | None:
        path = self.stage2_path(combo, target)
        meta = _read_meta(path)
        if meta is None:
            return None
        with np.load(path) as z:
            out = Stage2Output(z["linear_valid"], z["linear_test"],
                               {v: z[f"boosted_valid_{v}"] for v in VARIANTS},
                               {v: z[f"boosted_test_{v}"] for v in VARIANTS}, meta["cv_ndcg"], meta["hp"])
        return out, meta["key"]

    # ------------------------------------------------------------------ stage 3
    def stage3_path(self, target: str) -> Path:
        return self.cache / "stage3" / f"{target}.npz"

    def stage3(self, target: str) -> str:
        c = self.cfg
        combos = [cb for cb in c.combos() if target in cb.targets]
        outputs, keys, absent = {}, {}, []
        for combo in combos:
            got = self.stage2_output(combo, target)
            if got is None:
                absent.append(combo.id)
                continue
            ds, _ = self.load_dataset(combo)
            valid_s, test_s, _ = self.stage1_tables(combo, target)
            outputs[combo.id] = DatasetOutputs(ds.store, valid_s, test_s, got[0])
            keys[combo.id] = got[1]
        if absent:
            raise MissingDependency(f"stage-2 outputs missing for {target}: {', '.join(absent)}; run 'stage2'")
        target_ds, target_key = self.load_dataset(MarketCombo((), (target,)), allow_fuse=True)
        key = _digest({"stage2": keys, "target": target_key, "ranker": c.ranker, "budget": c.budgets["stage3"],
                       "linear": c.budgets["linear"], "seeds": c.seeds, "folds": c.folds, "k": c.k})
        path = self.stage3_path(target)
        meta = _read_meta(path)
        if meta and meta.get("key") == key:
            self.journal("stage3", target, "hit", 0.0, meta.get("objective"))
            return key
        t = time.time()
        res = final_stack(target, outputs, [cb.id for cb in combos], target_ds.store, self.batch(target, "valid"),
                          self.batch(target, "test"), self.plan(target), c.ranker, c.budgets["stage3"],
                          c.budgets["linear"], c.seeds[0])
        _save_npz(path, {"test_scores": res.test_scores, "linear_test": res.linear_test,
                         "valid_oof": res.valid_oof},
                  {"key": key, "objective": res.cv_ndcg, "hp": res.hp, "schema": res.spec.schema_hash,
                   "features": list(res.spec.names), "datasets": sorted(outputs)})
        self.journal("stage3", target, "computed", time.time() - t, res.cv_ndcg)
        return key

    def stage3_result(self, target: str):
        path = self.stage3_path(target)
        meta = _read_meta(path)
        if meta is None:
            raise MissingDependency(f"stage-3 output for {target} is missing; run 'stage3'")
        with np.load(path) as z:
            return {k: z[k] for k in z.files}, meta

    def active_targets(self) -> list[str]:
        combos = self.cfg.combos()
        return [t for t in self.cfg.targets if any(t in cb.targets for cb in combos)]


# ---------------------------------------------------------------------- commands

def cmd_prepare(run: Runner) -> int:
    combos = run.cfg.combos()
    for m in sorted({m for cb in combos for m in cb.markets}):
        run.market_digest(m)
    run._map(run.prepare, combos)
    logger.info("prepare: %d datasets (%d cache hits)", len(combos), run.counts.get("prepare:hit", 0))
    return EXIT_OK


def cmd_stage1(run: Runner) -> int:
    for combo in run.cfg.combos():
        ds, fused_key = run.load_dataset(combo)
        run._map(lambda a: run.stage1(combo, a, ds, fused_key), list(run.cfg.recommenders))
    return EXIT_OK


def cmd_stage2(run: Runner) -> int:
    jobs = [(cb, t) for cb in run.cfg.combos() for t in cb.targets]
    run._map(lambda job: run.stage2(*job), jobs)
    return EXIT_OK


def cmd_stage3(run: Runner) -> int:
    for target in run.active_targets():
        run.stage3(target)
    return EXIT_OK


def _scored(batch: SlateBatch, scores, secondary=None) -> list[ScoredSlate]:
    scores = np.asarray(scores).reshape(len(batch), -1)
    sec = None if secondary is None else np.asarray(secondary).reshape(len(batch), -1)
    return [ScoredSlate(u, tuple(batch.items[r]), scores[r], None if sec is None else sec[r])
            for r, u in enumerate(batch.users)]


def _profiles(store, users) -> dict[str, int]:
    lengths = np.diff(store.matrix.indptr)
    idx = store.user_map.indices(users)
    return {u: int(lengths[i]) if i >= 0 else 0 for u, i in zip(users, idx)}


def build_report(run: Runner) -> tuple[EvalReport, dict[str, str]]:
    """NDCG@k of every cached artifact, on test qrels where known, else validation."""
    report = EvalReport()
    splits: dict[str, str] = {}
    k = run.cfg.k
    for target in run.active_targets():
        bundle = run.bundle(target)
        split = "test" if bundle.test_qrels else "valid"
        splits[target] = split
        qrels = bundle.test_qrels if split == "test" else bundle.valid_qrels
        batch = run.batch(target, split)
        for combo in [cb for cb in run.cfg.combos() if target in cb.targets]:
            ds, _ = run.load_dataset(combo)
            prof = _profiles(ds.store, batch.users)
            label = combo.id if len(combo.targets) == 1 else f"{combo.id}[{target}]"
            valid_s, test_s, _ = run.stage1_tables(combo, target)
            tables = test_s if split == "test" else valid_s
            for algorithm, table in tables.items():
                report += evaluate_run(_scored(batch, table), qrels, prof, label, algorithm, "none", k)
            got = run.stage2_output(combo, target)
            if got is not None:
                out = got[0]
                lin = out.linear_test if split == "test" else out.linear_valid
                report += evaluate_run(_scored(batch, lin), qrels, prof, label, "stage2-linear", "minmax", k)
                for v in VARIANTS:
                    pred = out.boosted_test[v] if split == "test" else out.boosted_valid[v]
                    report += evaluate_run(_scored(batch, pred), qrels, prof, label, "stage2-boosted", v, k)
        try:
            res, _ = run.stage3_result(target)
        except MissingDependency:
            continue
        target_ds, _ = run.load_dataset(MarketCombo((), (target,)), allow_fuse=True)
        prof = _profiles(target_ds.store, batch.users)
        if split == "test":
            scored = _scored(batch, res["test_scores"], res["linear_test"])
        else:
            scored = _scored(batch, res["valid_oof"])
        report += evaluate_run(scored, qrels, prof, target, "stage3", "none", k)
    return report, splits


def cmd_evaluate(run: Runner) -> int:
    report, splits = build_report(run)
    out = run.cfg.output_dir
    atomic_write_text(out / "report.tsv", report.to_tsv())
    text = "".join(f"# {t}: NDCG@{run.cfg.k} on {s} positives\n" for t, s in splits.items()) + report.to_text()
    atomic_write_text(out / "report.txt", text)
    print(text)
    return EXIT_OK


def cmd_submit(run: Runner) -> int:
    for target in run.active_targets():
        res, _ = run.stage3_result(target)
        batch = run.batch(target, "test")
        path = run.cfg.output_dir / f"submission_{target}.tsv"
        write_submission(_scored(batch, res["test_scores"], res["linear_test"]), path)
        logger.info("wrote %s", path)
    return EXIT_OK


def cmd_run(run: Runner) -> int:
    for step in (cmd_prepare, cmd_stage1, cmd_stage2, cmd_stage3, cmd_submit):
        step(run)
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "stage1": cmd_stage1, "stage2": cmd_stage2, "stage3": cmd_stage3,
            "evaluate": cmd_evaluate, "submit": cmd_submit, "run": cmd_run}


def cmd_synth(args) -> int:
    cfg = SynthConfig(users_per_market=args.users, n_items=args.items, dim=args.dim, noise=args.noise,
                      seed=args.seed)
    write_synthetic(cfg, args.out)
    print(f"synthetic markets written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmrec", description="Cross-market recommendation pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name, help=f"run the {name} step" if name != "run" else "run every stage")
        c.add_argument("--config", required=True, help="pipeline config (JSON)")
        c.add_argument("--jobs", type=int, default=1, help="parallel artifact jobs")
        c.add_argument("--seed-override", type=int, default=None,
                       help="replace the seeds with N, N+1, ... (same count)")
        c.add_argument("--combo-filter", default=None, help="e.g. 't1', 't1+s2,=s1-t2' or '*'")
        c.add_argument("-v", "--verbose", action="count", default=0)
    s = sub.add_parser("synth", help="write a synthetic multi-market world")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int, default=2000)
    s.add_argument("--items", type=int, default=3000)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = PipelineConfig.load(args.config)
        if args.seed_override is not None:
            cfg = replace(cfg, seeds=tuple(args.seed_override + i for i in range(len(cfg.seeds))))
        if args.combo_filter is not None:
            cfg = replace(cfg, combo_filter=args.combo_filter)
        return COMMANDS[args.command](Runner(cfg, args.jobs))
    except FormatError as e:
        print(f"xmrec: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as e:
        print(f"xmrec: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"xmrec: missing input: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except MissingDependency as e:
        print(f"xmrec: {e}", file=sys.stderr)
        return EXIT_MISSING_DEPENDENCY


if __name__ == "__main__":
    sys.exit(main())

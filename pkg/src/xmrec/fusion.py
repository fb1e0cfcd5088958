"""Market combinations and their fusion into single training datasets."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .io import (
    MARKETS, SOURCE_MARKETS, TARGET_MARKETS, IdMap, InteractionStore, MarketBundle,
    atomic_write_text, build_store,
)

# unit ratings of the preprocessed data are mapped to the average positive rating
UNIT_RATING_SUBSTITUTE = 4.0


@dataclass(frozen=True)
class MarketCombo:
    sources: tuple[str, ...]
    targets: tuple[str, ...]

    def __post_init__(self):
        if not self.targets:
            raise ValueError("a combo needs at least one target market")
        object.__setattr__(self, "sources", _canonical(self.sources))
        object.__setattr__(self, "targets", _canonical(self.targets))

    @property
    def markets(self) -> tuple[str, ...]:
        return _canonical(self.sources + self.targets)

    @property
    def id(self) -> str:
        return "-".join(self.markets)

    def __contains__(self, market: str) -> bool:
        return market in self.sources or market in self.targets

    @classmethod
    def from_id(cls, combo_id: str) -> "MarketCombo":
        parts = combo_id.split("-")
        unknown = [p for p in parts if p not in MARKETS]
        if unknown or len(set(parts)) != len(parts):
            raise ValueError(f"bad combo id {combo_id!r}")
        return cls(tuple(p for p in parts if p.startswith("s")),
                   tuple(p for p in parts if p.startswith("t")))

    def __str__(self) -> str:
        return self.id


def _canonical(markets: Iterable[str]) -> tuple[str, ...]:
    ms = set(markets)
    order = {m: i for i, m in enumerate(MARKETS)}
    return tuple(sorted(ms, key=lambda m: (order.get(m, len(order)), m)))


def _subsets(items: Sequence[str]):
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def enumerate_combos(sources: Sequence[str] = SOURCE_MARKETS,
                     targets: Sequence[str] = TARGET_MARKETS) -> list[MarketCombo]:
    """Every (source subset) x (non-empty target subset), sorted by combo id."""
    sources, targets = _canonical(sources), _canonical(targets)
    combos = [MarketCombo(s, t) for s in _subsets(sources) for t in _subsets(targets) if t]
    return sorted(combos, key=lambda c: c.id)


def combos_with_target(combos: Iterable[MarketCombo], target: str) -> list[MarketCombo]:
    return [c for c in combos if target in c.targets]


@dataclass(frozen=True, eq=False)
class FusedDataset:
    combo: MarketCombo
    store: InteractionStore
    provenance: np.ndarray  # market label per dense user index

    @property
    def id(self) -> str:
        return self.combo.id

    def users_of(self, market: str) -> np.ndarray:
        return np.flatnonzero(self.provenance == market)


def market_triples(bundle: MarketBundle, unit_rating: float = UNIT_RATING_SUBSTITUTE):
    """Raw train triples followed by the preprocessed ones with the unit rating substituted."""
    for u, i, r in bundle.train.triples():
        yield u, i, r
    for u, i, _ in bundle.train_5core.triples():
        yield u, i, unit_rating


def fuse(combo: MarketCombo, bundles: Mapping[str, MarketBundle],
         unit_rating: float = UNIT_RATING_SUBSTITUTE) -> FusedDataset:
    """Join the interactions of the combo's markets into one store.

    Users stay market-specific, items are shared by token, and repeated
    (user, item) ratings from either file are averaged.
    """
    missing = [m for m in combo.markets if m not in bundles]
    if missing:
        raise KeyError(f"markets missing for combo {combo.id}: {', '.join(missing)}")
    owner: dict[str, str] = {}
    triples = []
    for m in combo.markets:
        for u, i, r in market_triples(bundles[m], unit_rating):
            prev = owner.setdefault(u, m)
            if prev != m:
                raise ValueError(f"user {u} appears in markets {prev} and {m}")
            triples.append((u, i, r))
    store = build_store(triples)
    provenance = np.array([owner[u] for u in store.user_map], dtype=object)
    return FusedDataset(combo, store, provenance)


def save_fused(ds: FusedDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / "users.tsv", "".join(
        f"{u}\t{m}\n" for u, m in zip(ds.store.user_map, ds.provenance)))
    atomic_write_text(d / "items.tsv", "".join(f"{i}\n" for i in ds.store.item_map))
    coo = ds.store.matrix.tocoo()
    atomic_write_text(d / "ratings.tsv", "".join(
        f"{u}\t{i}\t{float(r)!r}\n" for u, i, r in zip(coo.row, coo.col, coo.data)))
    return d


def load_fused(directory, combo: MarketCombo | None = None) -> FusedDataset:
    import scipy.sparse as sp

    d = Path(directory)
    users, prov = [], []
    for line in (d / "users.tsv").read_text(encoding="utf-8").splitlines():
        u, m = line.split("\t")
        users.append(u)
        prov.append(m)
    items = (d / "items.tsv").read_text(encoding="utf-8").splitlines()
    rows, cols, vals = [], [], []
    for line in (d / "ratings.tsv").read_text(encoding="utf-8").splitlines():
        u, i, r = line.split("\t")
        rows.append(int(u))
        cols.append(int(i))
        vals.append(float(r))
    mat = sp.csr_matrix((np.array(vals, dtype=np.float64), (np.array(rows, dtype=np.int64),
                        np.array(cols, dtype=np.int64))), shape=(len(users), len(items)))
    mat.sort_indices()
    store = InteractionStore(mat, IdMap(users), IdMap(items))
    combo = combo or MarketCombo.from_id(d.name)
    return FusedDataset(combo, store, np.array(prov, dtype=object))


def filter_combos(combos: Iterable[MarketCombo], expr: str | None) -> list[MarketCombo]:
    """Keep combos matching ``expr``.

    Clauses are comma-separated and OR-ed. ``*`` matches everything,
    ``=s1-t1`` one combo id exactly, and ``t1+s2`` every combo containing
    all listed markets. An empty or missing expression keeps everything.
    """
    combos = list(combos)
    if expr is None or not expr.strip():
        return combos
    clauses = [c.strip() for c in expr.split(",") if c.strip()]
    for clause in clauses:
        if clause.startswith("="):
            MarketCombo.from_id(clause[1:])  # raises on a malformed id
        elif clause != "*":
            bad = [m for m in clause.split("+") if m not in MARKETS]
            if bad:
                raise ValueError(f"unknown market {bad[0]!r} in combo filter")

    def keep(combo: MarketCombo) -> bool:
        for clause in clauses:
            if clause == "*":
                return True
            if clause.startswith("="):
                if combo.id == MarketCombo.from_id(clause[1:]).id:
                    return True
            elif all(m in combo for m in clause.split("+")):
                return True
        return False

    return [c for c in combos if keep(c)]

"""Reading and writing competition-format market files.

Every market directory holds ``train.tsv``, ``train_5core.tsv``,
``valid_run.tsv``, ``valid_qrel.tsv`` and (for target markets)
``test_run.tsv``. All files are UTF-8 TSV without quoting.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .metrics import tie_break

SLATE_SIZE = 100
MARKETS = ("s1", "s2", "s3", "t1", "t2")
SOURCE_MARKETS = ("s1", "s2", "s3")
TARGET_MARKETS = ("t1", "t2")

_HEADER_TOKENS = {"userid", "user_id", "user", "uid"}


class FormatError(ValueError):
    """Raised for malformed input files; carries the path and line number."""

    def __init__(self, message: str, path: str | os.PathLike | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class RatingTriple:
    user_id: str
    item_id: str
    rating: float

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("empty user or item token")
        if not math.isfinite(self.rating):
            raise ValueError(f"non-finite rating {self.rating!r}")


class IdMap:
    """Bijection between opaque external tokens and dense 0-based indices."""

    __slots__ = ("_forward", "_backward")

    def __init__(self, tokens: Iterable[str] = ()):
        self._forward: dict[str, int] = {}
        self._backward: list[str] = []
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._forward.get(token)
        if idx is None:
            idx = len(self._backward)
            self._forward[token] = idx
            self._backward.append(token)
        return idx

    def index(self, token: str) -> int:
        return self._forward[token]

    def get(self, token: str, default: int = -1) -> int:
        return self._forward.get(token, default)

    def token(self, index: int) -> str:
        return self._backward[index]

    def indices(self, tokens: Iterable[str], default: int = -1) -> np.ndarray:
        fwd = self._forward
        return np.fromiter((fwd.get(t, default) for t in tokens), dtype=np.int64)

    @property
    def tokens(self) -> list[str]:
        return list(self._backward)

    def copy(self) -> "IdMap":
        return IdMap(self._backward)

    def __contains__(self, token) -> bool:
        return token in self._forward

    def __len__(self) -> int:
        return len(self._backward)

    def __iter__(self):
        return iter(self._backward)

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMap) and self._backward == other._backward

    def __repr__(self) -> str:
        return f"IdMap(n={len(self)})"


@dataclass(frozen=True, eq=False)
class InteractionStore:
    """Deduplicated user x item rating matrix with its id maps.

    ``matrix`` is CSR with sorted indices and one entry per (user, item).
    """

    matrix: sp.csr_matrix
    user_map: IdMap
    item_map: IdMap

    def __post_init__(self):
        m = self.matrix
        if m.shape != (len(self.user_map), len(self.item_map)):
            raise ValueError(f"matrix shape {m.shape} does not match maps "
                             f"({len(self.user_map)}, {len(self.item_map)})")
        if m.nnz and (not np.all(np.isfinite(m.data)) or m.data.min() <= 0):
            raise ValueError("ratings must be finite and > 0")

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def profile_lengths(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def user_items(self, user: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[user]:m.indptr[user + 1]]

    def triples(self) -> list[tuple[str, str, float]]:
        """Entries as (user token, item token, rating), row-major."""
        coo = self.matrix.tocoo()
        ut, it = self.user_map.tokens, self.item_map.tokens
        return [(ut[u], it[i], float(r)) for u, i, r in zip(coo.row, coo.col, coo.data)]

    def __repr__(self) -> str:
        return f"InteractionStore(n_users={self.n_users}, n_items={self.n_items}, nnz={self.nnz})"


@dataclass(frozen=True)
class CandidateSlate:
    user_id: str
    candidates: tuple[str, ...]
    positive: str | None = None

    def __post_init__(self):
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError(f"slate for {self.user_id} has duplicate candidates")
        if self.positive is not None and self.positive not in self.candidates:
            raise ValueError(f"positive {self.positive} not among candidates of {self.user_id}")

    def with_positive(self, item: str | None) -> "CandidateSlate":
        return CandidateSlate(self.user_id, self.candidates, item)


@dataclass
class MarketBundle:
    market_id: str
    train: InteractionStore
    train_5core: InteractionStore
    valid_slates: list[CandidateSlate]
    test_slates: list[CandidateSlate]
    valid_qrels: dict[str, str]
    # only present for synthetic worlds, where the hidden test positives are known
    test_qrels: dict[str, str] = field(default_factory=dict)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, encoding="utf-8", newline="") as fh:
        return [ln.rstrip("\r\n") for ln in fh]


def parse_ratings(path, has_rating_column: bool = True) -> list[RatingTriple]:
    """Parse a ``user<TAB>item[<TAB>rating]`` file.

    Files without a rating column (the 5-core preprocessed data) get a
    rating of 1.0 for every line. A header is recognised on the first line
    either by a non-numeric third column or by a user-id-like first field;
    repeated copies of it are skipped.
    """
    lines = _read_lines(path)
    header = None
    out: list[RatingTriple] = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if header is None and lineno == 1 and _looks_like_header(cols):
            header = line
            continue
        if header is not None and line == header:
            continue
        need = 3 if has_rating_column else 2
        if len(cols) < need:
            raise FormatError(f"expected at least {need} columns, got {len(cols)}", path, lineno)
        if len(cols) > 3:
            raise FormatError(f"expected at most 3 columns, got {len(cols)}", path, lineno)
        user, item = cols[0], cols[1]
        if not user or not item:
            raise FormatError("empty user or item token", path, lineno)
        if has_rating_column:
            try:
                rating = float(cols[2])
            except ValueError:
                raise FormatError(f"non-numeric rating {cols[2]!r}", path, lineno) from None
            if not math.isfinite(rating) or not 0.0 <= rating <= 5.0:
                raise FormatError(f"rating {cols[2]!r} outside [0, 5]", path, lineno)
        else:
            rating = 1.0
        out.append(RatingTriple(user, item, rating))
    return out


def _looks_like_header(cols: Sequence[str]) -> bool:
    if cols[0].strip().lower() in _HEADER_TOKENS:
        return True
    return len(cols) >= 3 and not _is_number(cols[2])


def parse_run(path) -> list[CandidateSlate]:
    """Parse ``user<TAB>item1,...,item100`` slates in file order."""
    lines = _read_lines(path)
    slates: list[CandidateSlate] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if lineno == 1 and cols[0].strip().lower() in _HEADER_TOKENS:
            continue
        if len(cols) != 2:
            raise FormatError(f"expected 2 columns, got {len(cols)}", path, lineno)
        user = cols[0]
        items = tuple(cols[1].split(","))
        if len(items) != SLATE_SIZE:
            raise FormatError(f"slate size {len(items)} ≠ {SLATE_SIZE} for user {user}", path, lineno)
        if user in seen:
            raise FormatError(f"duplicate user {user}", path, lineno)
        seen.add(user)
        try:
            slates.append(CandidateSlate(user, items))
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
    return slates


def parse_qrels(path) -> dict[str, str]:
    lines = _read_lines(path)
    qrels: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if lineno == 1 and _looks_like_header(cols):
            continue
        if len(cols) != 3:
            raise FormatError(f"expected 3 columns, got {len(cols)}", path, lineno)
        user, item, rel = cols
        try:
            relevance = float(rel)
        except ValueError:
            raise FormatError(f"non-numeric relevance {rel!r}", path, lineno) from None
        if relevance != 1.0:
            raise FormatError(f"relevance must be 1, got {rel!r}", path, lineno)
        if user in qrels:
            raise FormatError(f"second positive for user {user}", path, lineno)
        qrels[user] = item
    return qrels


def build_store(triples: Iterable, user_map: IdMap | None = None, item_map: IdMap | None = None,
                extend: bool = True) -> InteractionStore:
    """Collapse rating triples into an :class:`InteractionStore`.

    Repeated (user, item) pairs are averaged. Fresh maps assign indices in
    order of first appearance; supplied maps are copied and, if ``extend``,
    grown with unseen tokens (otherwise unseen tokens raise ``KeyError``).
    """
    umap = IdMap() if user_map is None else user_map.copy()
    imap = IdMap() if item_map is None else item_map.copy()
    sums: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    for t in triples:
        u, i, r = (t.user_id, t.item_id, t.rating) if isinstance(t, RatingTriple) else t
        if extend:
            ui, ii = umap.add(u), imap.add(i)
        else:
            ui, ii = umap.index(u), imap.index(i)
        key = (ui, ii)
        sums[key] = sums.get(key, 0.0) + float(r)
        counts[key] = counts.get(key, 0) + 1
    return _store_from_sums(sums, counts, umap, imap)


def _store_from_sums(sums, counts, umap: IdMap, imap: IdMap) -> InteractionStore:
    n = len(sums)
    rows = np.empty(n, dtype=np.int64)
    cols = np.empty(n, dtype=np.int64)
    vals = np.empty(n, dtype=np.float64)
    for k, (key, s) in enumerate(sums.items()):
        rows[k], cols[k] = key
        vals[k] = s / counts[key]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(umap), len(imap)))
    mat.sort_indices()
    return InteractionStore(mat, umap, imap)


def write_store(store: InteractionStore, path) -> None:
    """Serialize as ``user<TAB>item<TAB>rating`` triples (``repr`` floats)."""
    lines = [f"{u}\t{i}\t{r!r}\n" for u, i, r in store.triples()]
    atomic_write_text(path, "".join(lines))


def load_market(root, market_id: str) -> MarketBundle:
    """Load one market directory ``root/market_id``."""
    d = Path(root) / market_id
    train_path = d / "train.tsv"
    core_path = d / "train_5core.tsv"
    for p in (train_path, core_path, d / "valid_run.tsv", d / "valid_qrel.tsv"):
        if not p.exists():
            raise FileNotFoundError(str(p))
    train = build_store(parse_ratings(train_path, True))
    # the preprocessed file's third column (if any) is ignored: all entries are unit ratings
    core = build_store(parse_ratings(core_path, has_rating_column=False))
    qrels = parse_qrels(d / "valid_qrel.tsv")
    valid = [s.with_positive(qrels.get(s.user_id)) for s in parse_run(d / "valid_run.tsv")]
    missing = [s.user_id for s in valid if s.positive is None]
    if missing:
        raise FormatError(f"{len(missing)} validation slates lack a positive (e.g. {missing[0]})",
                          d / "valid_qrel.tsv")
    test_path = d / "test_run.tsv"
    test = parse_run(test_path) if test_path.exists() else []
    test_qrel_path = d / "test_qrel.tsv"
    test_qrels = parse_qrels(test_qrel_path) if test_qrel_path.exists() else {}
    bundle = MarketBundle(market_id, train, core, valid, test, qrels, test_qrels)
    check_bundle(bundle)
    return bundle


def check_bundle(bundle: MarketBundle) -> None:
    users = set(bundle.train.user_map) | set(bundle.train_5core.user_map)
    for kind, slates in (("valid", bundle.valid_slates), ("test", bundle.test_slates)):
        for s in slates:
            if s.user_id not in users:
                raise FormatError(f"{kind} slate user {s.user_id} has no training data "
                                  f"in market {bundle.market_id}")
    if any(s.positive is not None for s in bundle.test_slates):
        raise FormatError("test slates must not carry positives")


def write_market(bundle: MarketBundle, root) -> Path:
    """Write a bundle in the competition layout (used by the synthetic generator)."""
    d = Path(root) / bundle.market_id
    d.mkdir(parents=True, exist_ok=True)
    header = "userId\titemId\trating\n"
    atomic_write_text(d / "train.tsv", header + "".join(
        f"{u}\t{i}\t{_fmt_rating(r)}\n" for u, i, r in bundle.train.triples()))
    atomic_write_text(d / "train_5core.tsv", "userId\titemId\n" + "".join(
        f"{u}\t{i}\n" for u, i, _ in bundle.train_5core.triples()))
    atomic_write_text(d / "valid_run.tsv", "".join(
        f"{s.user_id}\t{','.join(s.candidates)}\n" for s in bundle.valid_slates))
    atomic_write_text(d / "valid_qrel.tsv", header + "".join(
        f"{u}\t{i}\t1\n" for u, i in bundle.valid_qrels.items()))
    if bundle.test_slates:
        atomic_write_text(d / "test_run.tsv", "".join(
            f"{s.user_id}\t{','.join(s.candidates)}\n" for s in bundle.test_slates))
    if bundle.test_qrels:
        atomic_write_text(d / "test_qrel.tsv", header + "".join(
            f"{u}\t{i}\t1\n" for u, i in bundle.test_qrels.items()))
    return d


def _fmt_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


@dataclass(frozen=True)
class ScoredSlate:
    """A slate's candidates with final scores and the tie-break scores."""

    user_id: str
    items: tuple[str, ...]
    scores: np.ndarray
    secondary: np.ndarray | None = None


def format_submission(slates: Sequence[ScoredSlate]) -> str:
    for s in slates:
        if len(s.scores) != len(s.items):
            raise ValueError(f"score count mismatch for user {s.user_id}")
        if not np.all(np.isfinite(s.scores)):
            raise ValueError(f"non-finite score in slate of user {s.user_id}")
        if s.secondary is not None and not np.all(np.isfinite(s.secondary)):
            raise ValueError(f"non-finite tie-break score in slate of user {s.user_id}")
    parts = []
    for s in slates:
        order = tie_break(s.items, s.scores, s.secondary)
        for rank, k in enumerate(order, 1):
            parts.append(f"{s.user_id}\t{s.items[k]}\t{rank}\t{float(s.scores[k])!r}\n")
    return "".join(parts)


def write_submission(slates: Sequence[ScoredSlate], path) -> Path:
    """Write ``user<TAB>item<TAB>rank<TAB>score`` lines, best first.

    Every score is validated before anything touches the disk.
    """
    text = format_submission(slates)
    atomic_write_text(path, text)
    return Path(path)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def stores_equal(a: InteractionStore, b: InteractionStore) -> bool:
    """Equality of the (user token, item token) -> rating mapping, ignoring index order."""
    return sorted(a.triples()) == sorted(b.triples())


def qrels_from(slates: Iterable[CandidateSlate]) -> Mapping[str, str]:
    return {s.user_id: s.positive for s in slates if s.positive is not None}

"""NDCG@10 on single-positive slates, the total slate ordering, and reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .profiles import ProfileGroup, assign_groups


def tie_break(items: Sequence[str], primary, secondary=None) -> np.ndarray:
    """Indices of ``items`` ordered by (primary desc, secondary desc, token asc).

    The order is total because tokens within a slate are distinct.
    """
    primary = np.asarray(primary, dtype=np.float64)
    n = len(items)
    if primary.shape != (n,):
        raise ValueError("primary scores must match items")
    token_rank = np.empty(n, dtype=np.int64)
    token_rank[sorted(range(n), key=items.__getitem__)] = np.arange(n)
    keys = [token_rank]
    if secondary is not None:
        secondary = np.asarray(secondary, dtype=np.float64)
        if secondary.shape != (n,):
            raise ValueError("secondary scores must match items")
        keys.append(-secondary)
    keys.append(-primary)
    return np.lexsort(keys)


def ndcg_at_k(ranked: Sequence[str], positive: str, k: int = 10) -> float:
    """NDCG@k of a ranked list with a single relevant item (ideal DCG = 1)."""
    try:
        rank = list(ranked).index(positive) + 1
    except ValueError:
        raise ValueError(f"positive {positive!r} not in candidate list") from None
    return discount(rank, k)


def discount(rank: int, k: int = 10) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def slate_ndcg(items: Sequence[str], scores, positive: str, secondary=None, k: int = 10) -> float:
    order = tie_break(items, scores, secondary)
    return ndcg_at_k([items[j] for j in order], positive, k)


def grouped_ndcg(scores: np.ndarray, labels: np.ndarray, group_ptr: np.ndarray, k: int = 10) -> np.ndarray:
    """Per-group NDCG@k for flat score arrays split by ``group_ptr`` offsets.

    Ties are ordered by position within the group (stable), which is what the
    boosted ranker and the linear ensemble see during optimisation. Groups
    without a positive get 0.
    """
    return _grouped_ndcg(np.ascontiguousarray(scores, dtype=np.float64),
                         np.ascontiguousarray(labels, dtype=np.float64),
                         np.ascontiguousarray(group_ptr, dtype=np.int64), k)


@njit(cache=True)
def _grouped_ndcg(scores, labels, group_ptr, k):
    n_groups = len(group_ptr) - 1
    out = np.zeros(n_groups)
    for g in range(n_groups):
        lo, hi = group_ptr[g], group_ptr[g + 1]
        order = np.argsort(-scores[lo:hi], kind="mergesort")
        dcg = 0.0
        n_pos = 0
        for r in range(hi - lo):
            if labels[lo + order[r]] > 0:
                n_pos += 1
                if r < k:
                    dcg += 1.0 / np.log2(r + 2.0)
        if n_pos == 0:
            continue
        idcg = 0.0
        for r in range(min(n_pos, k)):
            idcg += 1.0 / np.log2(r + 2.0)
        out[g] = dcg / idcg
    return out


def positive_rank_ndcg(scores: np.ndarray, positive_index: np.ndarray, k: int = 10) -> np.ndarray:
    """NDCG@k per row of a (n_slates, slate_size) score matrix with one positive each.

    Ties count the earlier column first, matching a stable descending sort.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rows = np.arange(scores.shape[0])
    pos = scores[rows, positive_index][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    ahead = (scores > pos) | ((scores == pos) & (cols < positive_index[:, None]))
    rank = ahead.sum(axis=1) + 1
    return np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)


@dataclass
class EvalRow:
    dataset: str
    model: str
    variant: str
    mean: float
    n_users: int
    group_means: dict[str, float] = field(default_factory=dict)
    group_counts: dict[str, int] = field(default_factory=dict)


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.rows + other.rows)

    def get(self, dataset: str, model: str, variant: str = "none") -> EvalRow:
        for r in self.rows:
            if (r.dataset, r.model, r.variant) == (dataset, model, variant):
                return r
        raise KeyError((dataset, model, variant))

    def to_tsv(self) -> str:
        groups = [g.label for g in ProfileGroup]
        head = ["dataset", "model", "variant", "n_users", "mean"]
        head += [f"{g}_ndcg" for g in groups] + [f"{g}_users" for g in groups]
        lines = ["\t".join(head)]
        for r in self.rows:
            vals = [r.dataset, r.model, r.variant, str(r.n_users), f"{r.mean:.5f}"]
            vals += [_fmt(r.group_means.get(g)) for g in groups]
            vals += [str(r.group_counts.get(g, 0)) for g in groups]
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned tables: one per model, dataset rows, then variant and group columns."""
        groups = [g.label for g in ProfileGroup]
        out = []
        for model in dict.fromkeys(r.model for r in self.rows):
            rows = [r for r in self.rows if r.model == model]
            variants = list(dict.fromkeys(r.variant for r in rows))
            datasets = list(dict.fromkeys(r.dataset for r in rows))
            head = ["Dataset"] + variants + [f"{g}" for g in groups] + ["Avg"]
            table = [head]
            for ds in datasets:
                by_var = {r.variant: r for r in rows if r.dataset == ds}
                first = by_var[variants[0]] if variants[0] in by_var else next(iter(by_var.values()))
                line = [ds] + [_fmt(by_var[v].mean) if v in by_var else "-" for v in variants]
                line += [_fmt(first.group_means.get(g)) for g in groups] + [_fmt(first.mean)]
                table.append(line)
            widths = [max(len(row[c]) for row in table) for c in range(len(head))]
            out.append(f"[{model}]  (group columns: variant {variants[0]}; Avg = plain mean over users)")
            for row in table:
                out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
            out.append("")
        return "\n".join(out)


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.5f}"


def evaluate_run(scored, qrels: Mapping[str, str], profile_lengths: Mapping[str, int],
                 dataset: str = "", model: str = "", variant: str = "none", k: int = 10) -> EvalReport:
    """Mean NDCG@k over scored slates, overall and per profile-length group.

    ``scored`` is an iterable of objects with ``user_id``, ``items``,
    ``scores`` and optional ``secondary`` (e.g. :class:`xmrec.io.ScoredSlate`).
    """
    users, values = [], []
    for s in scored:
        if s.user_id not in qrels:
            raise KeyError(f"no qrel for user {s.user_id}")
        if s.user_id not in profile_lengths:
            raise KeyError(f"no profile length for user {s.user_id}")
        users.append(s.user_id)
        values.append(slate_ndcg(s.items, s.scores, qrels[s.user_id], getattr(s, "secondary", None), k))
    values = np.asarray(values)
    codes = assign_groups([profile_lengths[u] for u in users]) if users else np.zeros(0, int)
    means, counts = {}, {}
    for g in ProfileGroup:
        mask = codes == int(g)
        counts[g.label] = int(mask.sum())
        if mask.any():
            means[g.label] = math.fsum(values[mask]) / mask.sum()
    # fsum keeps the means independent of slate order
    mean = math.fsum(values) / values.size if values.size else 0.0
    return EvalReport([EvalRow(dataset, model, variant, mean, len(users), means, counts)])

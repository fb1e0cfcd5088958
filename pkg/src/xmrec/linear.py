"""Score-combination ensemble: s(u,i) = sum_R c_R(g(u)) * s_R(u,i) ** e_R(g(u)).

Coefficients and exponents are shared by users whose profile length falls
in the same :class:`~xmrec.profiles.ProfileGroup`. Units ``R`` are
recommenders at the dataset level and datasets at the last level.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .metrics import positive_rank_ndcg
from .profiles import GROUP_EDGES, ProfileGroup, assign_group, assign_groups
from .tuner import Param, SearchSpace, run_search

logger = logging.getLogger(__name__)

N_GROUPS = len(ProfileGroup)
COEF_RANGE = (0.0, 1.0)
EXPO_RANGE = (0.25, 4.0)

__all__ = [
    "GROUP_EDGES", "GroupedParams", "LinearEnsemble", "ProfileGroup", "assign_group", "assign_groups",
    "combine", "normalize_minmax_userwise", "optimize_params",
]


def normalize_minmax_userwise(scores) -> np.ndarray:
    """Min-max scale each row (one slate) to [0, 1]; constant rows become 0.5."""
    x = np.array(scores, dtype=np.float64, ndmin=1)
    if x.size == 0:
        raise ValueError("empty slate")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite score")
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    span = hi - lo
    flat = span == 0
    out = (x - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.5, out)


@dataclass
class GroupedParams:
    units: tuple[str, ...]
    coef: np.ndarray  # (n_units, 4)
    expo: np.ndarray  # (n_units, 4)

    def __post_init__(self):
        self.units = tuple(self.units)
        self.coef = np.asarray(self.coef, dtype=np.float64).reshape(len(self.units), N_GROUPS)
        self.expo = np.asarray(self.expo, dtype=np.float64).reshape(len(self.units), N_GROUPS)
        if not (np.all(np.isfinite(self.coef)) and np.all(np.isfinite(self.expo))):
            raise ValueError("parameters must be finite")
        if self.coef.min(initial=0) < COEF_RANGE[0] or self.coef.max(initial=0) > COEF_RANGE[1]:
            raise ValueError(f"coefficients outside {COEF_RANGE}")
        if self.expo.size and (self.expo.min() < EXPO_RANGE[0] or self.expo.max() > EXPO_RANGE[1]):
            raise ValueError(f"exponents outside {EXPO_RANGE}")

    @classmethod
    def identity(cls, units: Sequence[str]) -> "GroupedParams":
        n = len(units)
        return cls(tuple(units), np.ones((n, N_GROUPS)), np.ones((n, N_GROUPS)))

    def to_tsv(self) -> str:
        lines = ["unit\tgroup\tc\te"]
        for r, unit in enumerate(self.units):
            for g in ProfileGroup:
                lines.append(f"{unit}\t{g.label}\t{float(self.coef[r, g])!r}\t{float(self.expo[r, g])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "GroupedParams":
        labels = {g.label: int(g) for g in ProfileGroup}
        units: list[str] = []
        values: dict[tuple[str, int], tuple[float, float]] = {}
        for line in text.splitlines()[1:]:
            if not line:
                continue
            unit, group, c, e = line.split("\t")
            if unit not in units:
                units.append(unit)
            values[unit, labels[group]] = (float(c), float(e))
        coef = np.array([[values[u, g][0] for g in range(N_GROUPS)] for u in units])
        expo = np.array([[values[u, g][1] for g in range(N_GROUPS)] for u in units])
        return cls(tuple(units), coef, expo)


def _stack(table: Mapping[str, np.ndarray], units: Sequence[str]) -> np.ndarray:
    missing = [u for u in units if u not in table]
    if missing:
        raise KeyError(f"score table lacks units: {', '.join(missing)}")
    return np.stack([np.asarray(table[u], dtype=np.float64) for u in units], axis=-1)


def combine(table: Mapping[str, np.ndarray], params: GroupedParams, profile_lengths) -> np.ndarray:
    """Combined (n_slates, slate_size) scores from normalized per-unit score matrices."""
    extra = [u for u in table if u not in params.units]
    if extra:
        raise KeyError(f"no parameters for units: {', '.join(extra)}")
    stacked = _stack(table, params.units)  # (n_slates, slate, n_units)
    groups = assign_groups(profile_lengths)
    if groups.shape[0] != stacked.shape[0]:
        raise ValueError("one profile length per slate required")
    c = params.coef.T[groups]  # (n_slates, n_units)
    e = params.expo.T[groups]
    return np.einsum("su,sju->sj", c, stacked ** e[:, None, :])


def _group_objective(stacked, pos_idx, n_units, k):
    def objective(config):
        c = np.array([config[f"c{r}"] for r in range(n_units)])
        e = np.array([config[f"e{r}"] for r in range(n_units)])
        s = (stacked ** e) @ c
        return float(positive_rank_ndcg(s, pos_idx, k).mean()) if len(pos_idx) else 0.0
    return objective


def optimize_params(table: Mapping[str, np.ndarray], labels, profile_lengths, budget: int = 100,
                    seed: int = 0, k: int = 10, units: Sequence[str] | None = None,
                    n_random: int | None = None):
    """Search coefficients/exponents maximising validation NDCG@k.

    The objective separates over users, so each profile group is searched
    independently with its own ``budget``-trial run (seed offset by the
    group code). Returns ``(params, objective)`` where ``objective`` is the
    mean NDCG@k over all slates under the returned parameters. ``n_random``
    is passed to the tuner (fix it to make runs of different budgets nested).
    """
    units = tuple(units) if units is not None else tuple(table)
    stacked = _stack(table, units)
    labels = np.asarray(labels)
    if labels.shape != stacked.shape[:2]:
        raise ValueError("labels must be (n_slates, slate_size)")
    if np.any(labels.sum(axis=1) != 1):
        raise ValueError("every validation slate needs exactly one positive")
    if stacked.size and (stacked.min() < 0 or stacked.max() > 1):
        raise ValueError("scores must be normalized to [0, 1]")
    pos_idx = labels.argmax(axis=1)
    groups = assign_groups(profile_lengths)
    n = len(units)
    space = SearchSpace([Param(f"c{r}", "real", *COEF_RANGE) for r in range(n)]
                        + [Param(f"e{r}", "log-real", *EXPO_RANGE) for r in range(n)])
    coef = np.ones((n, N_GROUPS))
    expo = np.ones((n, N_GROUPS))
    total = 0.0
    for g in range(N_GROUPS):
        mask = groups == g
        fn = _group_objective(stacked[mask], pos_idx[mask], n, k)
        trials = run_search(space, fn, budget, seed=seed + g, n_random=n_random)
        best = max(trials, key=lambda t: t.objective)
        coef[:, g] = [best.config[f"c{r}"] for r in range(n)]
        expo[:, g] = [best.config[f"e{r}"] for r in range(n)]
        total += best.objective * mask.sum()
        logger.debug("group %s: %d users, ndcg %.5f", ProfileGroup(g).label, mask.sum(), best.objective)
    objective = total / len(groups) if len(groups) else 0.0
    return GroupedParams(units, coef, expo), objective


class LinearEnsemble(BaseEstimator):
    """Estimator wrapper: ``fit`` searches the parameters, ``predict`` combines.

    Score tables map a unit name to a (n_slates, slate_size) matrix of raw
    scores; they are min-max normalized per slate when ``normalize`` is set.
    """

    def __init__(self, budget: int = 100, seed: int = 0, normalize: bool = True, k: int = 10):
        self.budget = budget
        self.seed = seed
        self.normalize = normalize
        self.k = k

    def _prepare(self, table):
        if not self.normalize:
            return {u: np.asarray(v, dtype=np.float64) for u, v in table.items()}
        return {u: normalize_minmax_userwise(v) for u, v in table.items()}

    def fit(self, table, labels, profile_lengths):
        self.units_ = tuple(table)
        self.params_, self.objective_ = optimize_params(
            self._prepare(table), labels, profile_lengths, self.budget, self.seed, self.k, self.units_)
        return self

    def predict(self, table, profile_lengths) -> np.ndarray:
        check_is_fitted(self, "params_")
        return combine(self._prepare(table), self.params_, profile_lengths)

"""Synthetic multi-market worlds in the competition file layout.

Items share latent factors across markets; each market draws its users
around its own mean, so pooling markets carries real but imperfect signal.
Every user's chosen items are the top ``L + 2`` by noisy affinity: ``L`` go
to training, the other two become the validation and test positives. The 99
negatives of a slate are never chosen by that user, so with zero noise the
true affinity ranks every positive first.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .io import (MARKETS, SLATE_SIZE, TARGET_MARKETS, CandidateSlate, MarketBundle,
                 build_store, write_market)

logger = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.npz"
RATING_CUTS = (-1.0, -0.3, 0.3, 1.0)


@dataclass(frozen=True)
class SynthConfig:
    markets: tuple[str, ...] = MARKETS
    targets: tuple[str, ...] = TARGET_MARKETS
    users_per_market: int = 2000
    n_items: int = 3000
    dim: int = 16
    noise: float = 0.5
    source_ratings: tuple[int, int] = (10, 40)
    target_ratings: tuple[int, int] = (3, 15)
    market_shift: float = 0.7
    popularity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "markets", tuple(self.markets))
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(set(self.markets)) != len(self.markets):
            raise ValueError("duplicate market ids")
        if not set(self.targets) <= set(self.markets):
            raise ValueError("targets must be among markets")
        if self.users_per_market < 1 or self.dim < 1:
            raise ValueError("users_per_market and dim must be positive")
        if self.noise < 0 or self.market_shift < 0 or self.popularity < 0:
            raise ValueError("noise, market_shift and popularity must be >= 0")
        for lo, hi in (self.source_ratings, self.target_ratings):
            if not 1 <= lo <= hi:
                raise ValueError("rating ranges need 1 <= low <= high")
        if self.n_items < SLATE_SIZE + 100:
            raise ValueError(f"catalog of {self.n_items} items is too small for slates of {SLATE_SIZE}")
        most = max(self.source_ratings[1], self.target_ratings[1]) + 2
        if self.n_items - most < SLATE_SIZE - 1:
            raise ValueError("not enough unrated items to sample 99 negatives")

    def rating_range(self, market: str) -> tuple[int, int]:
        return self.target_ratings if market in self.targets else self.source_ratings


@dataclass
class GroundTruth:
    item_tokens: list[str]
    item_factors: np.ndarray
    item_bias: np.ndarray
    user_tokens: list[str]
    user_factors: np.ndarray
    _user_index: dict = field(default_factory=dict, repr=False)

    def affinity(self, user_tokens, item_tokens) -> np.ndarray:
        """Noise-free affinities of every (user, item) token pair; unknown tokens raise KeyError."""
        if not self._user_index:
            self._user_index = {u: k for k, u in enumerate(self.user_tokens)}
        items = {t: k for k, t in enumerate(self.item_tokens)}
        u = np.array([self._user_index[t] for t in user_tokens])
        i = np.array([items[t] for t in item_tokens])
        return self.user_factors[u] @ self.item_factors[i].T + self.item_bias[i]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, item_tokens=np.array(self.item_tokens), item_factors=self.item_factors,
                     item_bias=self.item_bias, user_tokens=np.array(self.user_tokens),
                     user_factors=self.user_factors)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["item_tokens"].tolist(), z["item_factors"], z["item_bias"],
                       z["user_tokens"].tolist(), z["user_factors"])


def item_token(i: int) -> str:
    return f"i{i:05d}"


def user_token(market: str, u: int) -> str:
    return f"{market}u{u:05d}"


def k_core(rows: np.ndarray, cols: np.ndarray, k: int = 5) -> np.ndarray:
    """Mask of interactions kept by iterative k-core filtering on users and items."""
    keep = np.ones(rows.size, dtype=bool)
    while True:
        ucount = np.bincount(rows[keep], minlength=rows.max(initial=-1) + 1)
        icount = np.bincount(cols[keep], minlength=cols.max(initial=-1) + 1)
        new = keep & (ucount[rows] >= k) & (icount[cols] >= k)
        if new.sum() == keep.sum():
            return new
        keep = new


def _sample_negatives(rng, n_items: int, excluded: set, n: int) -> list[int]:
    out: list[int] = []
    seen = set(excluded)
    while len(out) < n:
        for c in rng.integers(0, n_items, size=2 * (n - len(out))):
            c = int(c)
            if c not in seen:
                seen.add(c)
                out.append(c)
                if len(out) == n:
                    break
    return out


def _market(cfg: SynthConfig, market: str, rng, item_factors, item_bias):
    n, d = cfg.users_per_market, cfg.dim
    mean = rng.normal(scale=cfg.market_shift, size=d)
    users = (mean + rng.normal(size=(n, d))) / np.sqrt(d)
    affinity = users @ item_factors.T + item_bias
    scale = affinity.std() or 1.0
    noisy = affinity + cfg.noise * scale * rng.standard_normal(affinity.shape)
    lo, hi = cfg.rating_range(market)
    lengths = rng.integers(lo, hi + 1, size=n)
    tokens = [user_token(market, u) for u in range(n)]

    rows, cols, chosen_z = [], [], []
    valid, test, vq, tq = [], [], {}, {}
    z_all = (noisy - noisy.mean()) / (noisy.std() or 1.0)
    for u in range(n):
        top = np.argsort(-noisy[u], kind="stable")[:lengths[u] + 2]
        held = rng.choice(len(top), size=2, replace=False)
        pos_v, pos_t = int(top[held[0]]), int(top[held[1]])
        rated = np.delete(top, held)
        rows.extend([u] * len(rated))
        cols.extend(rated.tolist())
        chosen_z.extend(z_all[u, rated].tolist())
        excluded = set(top.tolist())
        for pos, slates, qrels in ((pos_v, valid, vq), (pos_t, test, tq)):
            cands = _sample_negatives(rng, cfg.n_items, excluded, SLATE_SIZE - 1) + [pos]
            rng.shuffle(cands)
            slates.append(CandidateSlate(tokens[u], tuple(item_token(c) for c in cands)))
            qrels[tokens[u]] = item_token(pos)
    rows, cols = np.asarray(rows), np.asarray(cols)
    ratings = np.digitize(np.asarray(chosen_z), RATING_CUTS) + 1.0
    train = build_store((tokens[r], item_token(c), float(v)) for r, c, v in zip(rows, cols, ratings))
    keep = k_core(rows, cols, 5)
    core = build_store((tokens[r], item_token(c), 1.0) for r, c in zip(rows[keep], cols[keep]))
    valid = [s.with_positive(vq[s.user_id]) for s in valid]
    bundle = MarketBundle(market, train, core, valid, test, vq, tq)
    return bundle, tokens, users


def _generate(cfg: SynthConfig) -> tuple[dict[str, MarketBundle], GroundTruth]:
    rng = np.random.default_rng(cfg.seed)
    item_factors = rng.normal(size=(cfg.n_items, cfg.dim))
    item_bias = cfg.popularity * rng.normal(size=cfg.n_items)
    bundles: dict[str, MarketBundle] = {}
    all_tokens, all_users = [], []
    for m in cfg.markets:
        bundle, tokens, users = _market(cfg, m, rng, item_factors, item_bias)
        bundles[m] = bundle
        all_tokens.extend(tokens)
        all_users.append(users)
    truth = GroundTruth([item_token(i) for i in range(cfg.n_items)], item_factors, item_bias,
                        all_tokens, np.vstack(all_users))
    return bundles, truth


def generate_synthetic(cfg: SynthConfig) -> dict[str, MarketBundle]:
    """Market id -> bundle; deterministic in ``cfg.seed``."""
    return _generate(cfg)[0]


def write_synthetic(cfg: SynthConfig, root) -> Mapping[str, MarketBundle]:
    """Write every market directory plus the ground-truth factors under ``root``."""
    bundles, truth = _generate(cfg)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for bundle in bundles.values():
        write_market(bundle, root)
    truth.save(root / GROUND_TRUTH_FILE)
    logger.info("wrote %d synthetic markets to %s", len(bundles), root)
    return bundles

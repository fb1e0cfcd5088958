"""Seeded black-box maximiser: random exploration, then Gaussian steps around the incumbent."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

KINDS = ("real", "log-real", "int", "log-int", "categorical")


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.choices:
                raise ValueError(f"{self.name}: categorical needs choices")
            return
        if self.low is None or self.high is None or not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ValueError(f"{self.name}: finite bounds required")
        if not self.low < self.high:
            raise ValueError(f"{self.name}: low must be < high")
        if self.kind.startswith("log") and self.low <= 0:
            raise ValueError(f"{self.name}: log kinds need low > 0")

    # work in a unit interval; log kinds are uniform in log space
    def _to_unit(self, value) -> float:
        lo, hi = self.low, self.high
        if self.kind.startswith("log"):
            return (math.log(value) - math.log(lo)) / (math.log(hi) - math.log(lo))
        return (value - lo) / (hi - lo)

    def _from_unit(self, u: float):
        u = min(max(u, 0.0), 1.0)
        lo, hi = self.low, self.high
        if self.kind.startswith("log"):
            x = math.exp(math.log(lo) + u * (math.log(hi) - math.log(lo)))
        else:
            x = lo + u * (hi - lo)
        if self.kind.endswith("int"):
            return int(min(max(round(x), math.ceil(lo)), math.floor(hi)))
        return float(min(max(x, lo), hi))

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        return self._from_unit(float(rng.random()))

    def perturb(self, value, rng: np.random.Generator, scale: float):
        if self.kind == "categorical":
            return self.sample(rng) if rng.random() < scale else value
        return self._from_unit(self._to_unit(value) + scale * float(rng.standard_normal()))

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        if self.kind.endswith("int") and int(value) != value:
            return False
        return self.low <= value <= self.high


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[Param, ...]

    def __init__(self, params: Sequence[Param]):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        object.__setattr__(self, "params", tuple(params))

    def sample(self, rng) -> dict[str, Any]:
        return {p.name: p.sample(rng) for p in self.params}

    def perturb(self, config, rng, scale: float) -> dict[str, Any]:
        return {p.name: p.perturb(config[p.name], rng, scale) for p in self.params}

    def contains(self, config) -> bool:
        return all(p.contains(config[p.name]) for p in self.params)

    def __len__(self):
        return len(self.params)


@dataclass
class Trial:
    config: dict[str, Any]
    objective: float
    seed: int
    index: int = 0
    meta: dict = field(default_factory=dict)


def run_search(space: SearchSpace, objective_fn: Callable[[dict], float], budget: int, seed: int = 0,
               n_random: int | None = None, scale: float = 0.1, journal=None) -> list[Trial]:
    """Evaluate exactly ``budget`` configurations and return them in order.

    The first ``n_random`` (default ``ceil(budget / 3)``) are uniform draws;
    each later one perturbs the best configuration seen so far. A NaN
    objective is recorded as ``-inf``. With a ``journal`` path, trials whose
    proposal matches an already journaled one are not re-evaluated.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if n_random is None:
        n_random = math.ceil(budget / 3)
    rng = np.random.default_rng(seed)
    previous = dict(_read_journal(journal)) if journal is not None else {}
    trials: list[Trial] = []
    best: Trial | None = None
    for t in range(budget):
        if t < n_random or best is None:
            config = space.sample(rng)
        else:
            config = space.perturb(best.config, rng, scale)
        # per-trial seed for objectives that need their own randomness
        trial_seed = int(rng.integers(2**31 - 1))
        key = _dump(config)
        if key in previous:
            value = previous[key]
        else:
            value = _evaluate(objective_fn, config)
            if journal is not None:
                _append_journal(journal, config, value)
                previous[key] = value
        trial = Trial(config, value, trial_seed, t)
        trials.append(trial)
        if best is None or value > best.objective:
            best = trial
    return trials


def search(space: SearchSpace, objective_fn: Callable[[dict], float], budget: int, seed: int = 0,
           **kwargs) -> Trial:
    """Best trial of :func:`run_search` (earliest on ties)."""
    trials = run_search(space, objective_fn, budget, seed, **kwargs)
    return max(trials, key=lambda tr: tr.objective)


def _evaluate(fn, config) -> float:
    value = float(fn(dict(config)))
    if math.isnan(value):
        logger.warning("objective returned NaN for %s", config)
        return -math.inf
    return value


def _dump(config) -> str:
    return json.dumps(config, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o).__name__)


def _append_journal(path, config, value) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # start on a fresh line if an interrupted run left a partial one
    torn = path.exists() and path.stat().st_size > 0 and not path.read_bytes().endswith(b"\n")
    with open(path, "a", encoding="utf-8") as fh:
        if torn:
            fh.write("\n")
        fh.write(f"{_dump(config)}\t{value!r}\t{time.time():.3f}\n")


def _read_journal(path) -> list[tuple[str, float]]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        parts = line.split("\t")
        if len(parts) != 3:
            continue  # partial line from an interrupted run
        out.append((parts[0], float(parts[1])))
    return out

"""Zero-shot change mining: positive examples drawn from the vocabulary."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError
from .features import min_distances
from .vocabulary import Vocabulary

Strategy = Literal["uniform", "farthest", "nearest"]
STRATEGIES = ("uniform", "farthest", "nearest")

_CHUNK = 4096


@dataclass(frozen=True)
class MiningConfig:
    strategy: Strategy = "uniform"
    min_neg_distance: int = 10
    max_examples: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown mining strategy {self.strategy!r}")
        if not 0 <= self.min_neg_distance <= 4096:
            raise ConfigError("min_neg_distance out of range")
        if self.max_examples < 1:
            raise ConfigError("max_examples must be >= 1")

    def check_width(self, nbits: int) -> None:
        if self.min_neg_distance > nbits:
            raise ConfigError(f"min_neg_distance {self.min_neg_distance} exceeds descriptor width {nbits}")


def negative_distances(v: Vocabulary, negatives: Sequence[int], ids=None) -> np.ndarray:
    """Min Hamming distance from each word (all, or ``ids``) to the negative exemplars."""
    neg = np.unique(np.asarray(negatives, dtype=np.int64))
    ids = np.arange(len(v)) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(neg) == 0:
        return np.full(len(ids), v.nbits + 1, dtype=np.int64)
    return min_distances(v.exemplars[ids], v.exemplars[neg])[0]


def filter_candidates(v: Vocabulary, negatives: Sequence[int], min_neg_distance: int = 10) -> np.ndarray:
    """Word ids at least ``min_neg_distance`` bits from every negative exemplar."""
    if len(negatives) == 0:
        return np.arange(len(v), dtype=np.int64)
    dist = negative_distances(v, negatives)
    return np.flatnonzero(dist >= min_neg_distance).astype(np.int64)


def mine(v: Vocabulary, candidates: Sequence[int], negatives: Sequence[int],
         cfg: MiningConfig) -> np.ndarray:
    """Pick up to ``cfg.max_examples`` positives from ``candidates``.

    ``uniform`` ranks every vocabulary word by a seeded permutation and takes
    candidates in that order, so it agrees with :func:`mine_positives`.
    ``farthest``/``nearest`` sort by distance to the nearest negative, ties by id.
    Returned ids are sorted ascending.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if len(cand) == 0:
        return cand
    k = min(cfg.max_examples, len(cand))
    if cfg.strategy == "uniform":
        position = np.empty(len(v), dtype=np.int64)
        position[_permutation(len(v), cfg.seed)] = np.arange(len(v))
        chosen = cand[np.argsort(position[cand], kind="stable")[:k]]
    else:
        dist = negative_distances(v, negatives, cand)
        key = -dist if cfg.strategy == "farthest" else dist
        chosen = cand[np.lexsort((cand, key))[:k]]
    return np.sort(chosen)


def mine_positives(v: Vocabulary, negatives: Sequence[int], cfg: MiningConfig) -> np.ndarray:
    """Filter then mine in one pass; equivalent to ``mine(filter_candidates(...))``.

    For the uniform strategy the vocabulary is visited in permutation order
    and only as much of it is scanned as needed to fill the quota.
    """
    cfg.check_width(v.nbits)
    if cfg.strategy != "uniform":
        cand = filter_candidates(v, negatives, cfg.min_neg_distance)
        return mine(v, cand, negatives, cfg)
    perm = _permutation(len(v), cfg.seed)
    picked: list[np.ndarray] = []
    need = cfg.max_examples
    for start in range(0, len(perm), _CHUNK):
        chunk = perm[start:start + _CHUNK]
        ok = chunk[negative_distances(v, negatives, chunk) >= cfg.min_neg_distance]
        picked.append(ok[:need])
        need -= len(picked[-1])
        if need == 0:
            break
    if not picked:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(picked))


def subsample(n: int, max_examples: int, seed: int) -> np.ndarray:
    """Seeded uniform subset of range(n) of size min(n, max_examples), ascending."""
    if n <= max_examples:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=max_examples, replace=False)).astype(np.int64)


def _permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 0x6D696E65]).permutation(n)

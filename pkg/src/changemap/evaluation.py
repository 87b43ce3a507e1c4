"""Collection-based evaluation: pooled rankings and top-X% success curves."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, ParseError
from .features import ImageFeatures, min_distances
from .parallel import pmap
from .proposals import BoundingBox, make_box

# Top-X levels in percent, kept as strings so thresholds are computed exactly.
X_PERCENT = ("0.1", "0.25", "0.5", "1", "2.5", "5")
DEFAULT_COLLECTION_SIZE = 20
DEFAULT_COLLECTION_COUNT = 20


@dataclass(frozen=True)
class Pair:
    query_id: str
    ref_id: str
    change_boxes: tuple[BoundingBox, ...] = ()

    @property
    def is_change(self) -> bool:
        return bool(self.change_boxes)

    def truth_mask(self, keypoints: np.ndarray) -> np.ndarray:
        """Keypoints strictly inside some change box."""
        kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
        hit = np.zeros(len(kp), dtype=bool)
        for b in self.change_boxes:
            hit |= (kp[:, 0] > b.x0) & (kp[:, 0] < b.x1) & (kp[:, 1] > b.y0) & (kp[:, 1] < b.y1)
        return hit


def load_annotations(path: str | Path) -> list[Pair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                boxes = tuple(make_box(*b) for b in rec.get("change_boxes", []))
                pairs.append(Pair(str(rec["query_id"]), str(rec["ref_id"]), boxes))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: bad annotation ({exc})", line.strip()) from exc
    return pairs


def save_annotations(path: str | Path, pairs: Iterable[Pair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            boxes = [[_num(v) for v in b] for b in p.change_boxes]
            fh.write(json.dumps({"query_id": p.query_id, "ref_id": p.ref_id, "change_boxes": boxes}) + "\n")


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


@dataclass(frozen=True)
class Collection:
    collection_id: int
    pairs: tuple[Pair, ...]

    def __post_init__(self):
        if sum(p.is_change for p in self.pairs) != 1:
            raise ValueError("a collection holds exactly one change pair")

    @property
    def change_pair(self) -> Pair:
        return next(p for p in self.pairs if p.is_change)


def build_collections(change: Sequence[Pair], nochange: Sequence[Pair],
                      size: int = DEFAULT_COLLECTION_SIZE, count: int | None = None,
                      seed: int = 0) -> list[Collection]:
    """One collection per change pair (up to ``count``), padded with sampled no-change pairs."""
    if size < 1:
        raise ValueError("collection size must be >= 1")
    count = len(change) if count is None else count
    if count > len(change):
        raise CapacityError(f"{count} collections requested but only {len(change)} change pairs")
    if size - 1 > len(nochange):
        raise CapacityError(f"collection size {size} needs {size - 1} no-change pairs, have {len(nochange)}")
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        pick = rng.choice(len(nochange), size - 1, replace=False)
        out.append(Collection(k, (change[k],) + tuple(nochange[i] for i in sorted(pick))))
    return out


def split_pairs(pairs: Iterable[Pair]) -> tuple[list[Pair], list[Pair]]:
    pairs = list(pairs)
    return [p for p in pairs if p.is_change], [p for p in pairs if not p.is_change]


def threshold(total: int, x_percent: str | float) -> int:
    """floor(X% of total), computed in exact arithmetic."""
    return math.floor(Fraction(str(x_percent)) * total / 100)


@dataclass(frozen=True)
class ImageScores:
    """Per-feature ranking keys of one query image, index-aligned with its features.

    Lower keys rank earlier; ``excluded`` features sort after all others.
    """

    score: np.ndarray
    excluded: np.ndarray
    truth: np.ndarray

    def __len__(self) -> int:
        return len(self.score)


def pooled_rank(images: Sequence[ImageScores]) -> int | None:
    """1-based rank of the best ground-truth feature in the pooled ascending list.

    Ties with non-ground-truth features are resolved against the ground truth.
    Returns None when the collection has no ground-truth feature.
    """
    score = np.concatenate([s.score for s in images])
    excl = np.concatenate([s.excluded for s in images])
    truth = np.concatenate([s.truth for s in images])
    if not truth.any():
        return None
    key = np.column_stack([excl.astype(np.float64), score])
    gt = key[truth]
    best = gt[np.lexsort((gt[:, 1], gt[:, 0]))[0]]
    other = key[~truth]
    ahead = (other[:, 0] < best[0]) | ((other[:, 0] == best[0]) & (other[:, 1] <= best[1]))
    return int(ahead.sum()) + 1


@dataclass(frozen=True)
class SuccessCurve:
    method: str
    ratios: Mapping[str, float]
    ranks: tuple[int | None, ...] = field(default=(), repr=False)
    totals: tuple[int, ...] = field(default=(), repr=False)

    def __getitem__(self, x_percent) -> float:
        return self.ratios[str(x_percent)]

    def as_rows(self) -> list[tuple[str, str, float]]:
        return [(self.method, x, self.ratios[x]) for x in self.ratios]


def success_curve(method: str, ranks: Sequence[int | None], totals: Sequence[int],
                  levels: Sequence[str] = X_PERCENT) -> SuccessCurve:
    n = len(ranks)
    ratios = {}
    for x in levels:
        hits = sum(1 for r, t in zip(ranks, totals) if r is not None and r <= threshold(t, x))
        ratios[x] = hits / n if n else 0.0
    return SuccessCurve(method, ratios, tuple(ranks), tuple(totals))


Scorer = Callable[[Pair], ImageScores]


def evaluate(collections: Sequence[Collection], scorer: Scorer, method: str = "pipeline",
             levels: Sequence[str] = X_PERCENT, jobs: int | None = 1) -> SuccessCurve:
    """Success ratio at each X over ``collections``.

    Each distinct pair is scored once, possibly in worker processes; results
    are reduced in collection-id order.
    """
    cols = sorted(collections, key=lambda c: c.collection_id)
    unique: dict[tuple[str, str], Pair] = {}
    for col in cols:
        for p in col.pairs:
            unique.setdefault((p.query_id, p.ref_id), p)
    keys = sorted(unique)
    scored = dict(zip(keys, pmap(scorer, [unique[k] for k in keys], jobs)))

    ranks, totals = [], []
    for col in cols:
        scores = [scored[(p.query_id, p.ref_id)] for p in col.pairs]
        ranks.append(pooled_rank(scores))
        totals.append(sum(len(s) for s in scores))
    return success_curve(method, ranks, totals, levels)


class DistanceOracle:
    """Rank features by exhaustive distance to the nearest raw reference feature, farthest first."""

    def __init__(self, queries: Mapping[str, ImageFeatures], references: Mapping[str, ImageFeatures]):
        self.queries = queries
        self.references = references

    def __call__(self, pair: Pair) -> ImageScores:
        q = self.queries[pair.query_id]
        r = self.references[pair.ref_id]
        d, _ = min_distances(q.descriptors, r.descriptors)
        return ImageScores(-d.astype(np.float64), np.zeros(len(q), dtype=bool), pair.truth_mask(q.keypoints))


CURVE_COLUMNS = ["method", "X_percent", "success_ratio"]


def write_curves_csv(path: str | Path, curves: Sequence[SuccessCurve], header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for c in curves:
            for method, x, ratio in c.as_rows():
                w.writerow([method, x, repr(float(ratio))])


def read_curves_csv(path: str | Path) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    with open(path, encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            out.setdefault(row["method"], {})[row["X_percent"]] = float(row["success_ratio"])
    return out

"""Query-to-reference alignment from matched visual words."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .proposals import BoundingBox

Visibility = Literal["hv", "h", "none"]
VISIBILITY_MODES = ("hv", "h", "none")
DELTA = 0.1
MARGIN_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class MatchSet:
    words: np.ndarray = field(repr=False)
    query: np.ndarray = field(repr=False)  # (M, 2) query keypoints
    reference: np.ndarray = field(repr=False)  # (M, 2) reference keypoints

    def __len__(self) -> int:
        return len(self.words)

    def subset(self, mask: np.ndarray) -> "MatchSet":
        return MatchSet(self.words[mask], self.query[mask], self.reference[mask])


@dataclass(frozen=True)
class LinearTransform:
    """Axis-separable map from reference to query: x' = a x + b, y' = c y + d."""

    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    d: float = 0.0
    confident: bool = True

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.column_stack([self.a * pts[:, 0] + self.b, self.c * pts[:, 1] + self.d])


IDENTITY = LinearTransform()


@dataclass(frozen=True)
class VisibleRegion:
    """Inclusive per-axis bounds on each side; ``None`` bounds are open."""

    query: tuple[float | None, float | None, float | None, float | None]
    reference: tuple[float | None, float | None, float | None, float | None]
    confident: bool = True

    @staticmethod
    def _mask(bounds, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        m = np.ones(len(pts), dtype=bool)
        x0, y0, x1, y1 = bounds
        if x0 is not None:
            m &= (pts[:, 0] >= x0) & (pts[:, 0] <= x1)
        if y0 is not None:
            m &= (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        return m

    def contains_query(self, pts: np.ndarray) -> np.ndarray:
        return self._mask(self.query, pts)

    def contains_reference(self, pts: np.ndarray) -> np.ndarray:
        return self._mask(self.reference, pts)


UNBOUNDED = (None, None, None, None)


def match_words(q_words: np.ndarray, q_kp: np.ndarray, r_words: np.ndarray, r_kp: np.ndarray) -> MatchSet:
    """Pair keypoints whose word occurs exactly once in each image, ordered by word."""
    q_words = np.asarray(q_words, dtype=np.int64)
    r_words = np.asarray(r_words, dtype=np.int64)
    qu, qi, qc = np.unique(q_words, return_index=True, return_counts=True)
    ru, ri, rc = np.unique(r_words, return_index=True, return_counts=True)
    qu, qi = qu[qc == 1], qi[qc == 1]
    ru, ri = ru[rc == 1], ri[rc == 1]
    common, a, b = np.intersect1d(qu, ru, assume_unique=True, return_indices=True)
    q_kp = np.asarray(q_kp, dtype=np.float64).reshape(-1, 2)
    r_kp = np.asarray(r_kp, dtype=np.float64).reshape(-1, 2)
    return MatchSet(common, q_kp[qi[a]], r_kp[ri[b]])


def trimmed_bounds(values: np.ndarray, delta: float = DELTA) -> tuple[float, float]:
    """The floor(delta n)-th and ceil((1-delta) n)-th smallest values, 1-based, clamped to [1, n]."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    # Guard against products like 0.9 * n landing a hair above an integer.
    lo = min(n, max(1, math.floor(delta * n + 1e-9)))
    hi = min(n, max(1, math.ceil((1 - delta) * n - 1e-9)))
    return float(v[lo - 1]), float(v[hi - 1])


def visible_region(m: MatchSet, delta: float = DELTA, mode: Visibility = "hv") -> VisibleRegion:
    if mode == "none":
        return VisibleRegion(UNBOUNDED, UNBOUNDED, True)
    if len(m) == 0:
        return VisibleRegion(UNBOUNDED, UNBOUNDED, False)

    def side(pts):
        x0, x1 = trimmed_bounds(pts[:, 0], delta)
        if mode == "h":
            return (x0, None, x1, None)
        y0, y1 = trimmed_bounds(pts[:, 1], delta)
        return (x0, y0, x1, y1)

    return VisibleRegion(side(m.query), side(m.reference), True)


def fit_transform(m: MatchSet) -> LinearTransform:
    """Least-squares fit of the axis-separable model; identity when degenerate."""
    if len(m) < 2:
        return LinearTransform(confident=False)
    rx, ry = m.reference[:, 0], m.reference[:, 1]
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        return LinearTransform(confident=False)
    a, b = _fit_axis(rx, m.query[:, 0])
    c, d = _fit_axis(ry, m.query[:, 1])
    if not (a > 0 and c > 0):
        return LinearTransform(confident=False)
    return LinearTransform(a, b, c, d, True)


def _fit_axis(src: np.ndarray, dst: np.ndarray) -> tuple[float, float]:
    # Centre first; the slope is then a ratio of centred moments.
    ms, md = src.mean(), dst.mean()
    s = src - ms
    slope = float((s * (dst - md)).sum() / (s * s).sum())
    return slope, float(md - slope * ms)


def transform_box(box: BoundingBox, t: LinearTransform, width: int, height: int,
                  margin_fraction: float = MARGIN_FRACTION) -> BoundingBox:
    """Map a reference box into the query image and grow it by ``margin_fraction * width``."""
    (x0, y0), (x1, y1) = t.apply([[box.x0, box.y0], [box.x1, box.y1]])
    x0, x1 = min(x0, x1), max(x0, x1)
    y0, y1 = min(y0, y1), max(y0, y1)
    m = margin_fraction * width
    return BoundingBox(max(0.0, x0 - m), max(0.0, y0 - m), min(float(width), x1 + m), min(float(height), y1 + m))


@dataclass(frozen=True)
class Registration:
    matches: MatchSet
    region: VisibleRegion
    transform: LinearTransform


def register(q_words, q_kp, r_words, r_kp, delta: float = DELTA, mode: Visibility = "hv") -> Registration:
    """Match words, trim to the common visible region, then fit the transform on the inliers."""
    m = match_words(q_words, q_kp, r_words, r_kp)
    region = visible_region(m, delta, mode)
    inliers = m.subset(region.contains_query(m.query) & region.contains_reference(m.reference))
    return Registration(m, region, fit_transform(inliers))

"""Object-region selection from raw proposals and grouping into object clusters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import MalformedInputError, ParseError
from .features import inside

MAX_PROPOSALS = 400
OVERLAP_THRESH = 0.5


class BoundingBox(NamedTuple):
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def intersection(self, other: "BoundingBox") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        return w * h if w > 0 and h > 0 else 0.0

    def overlaps(self, other: "BoundingBox") -> bool:
        return self.intersection(other) > 0

    def contains(self, keypoints: np.ndarray) -> np.ndarray:
        return inside(keypoints, self)


def make_box(x0, y0, x1, y1) -> BoundingBox:
    if not (x0 < x1 and y0 < y1):
        raise MalformedInputError(f"degenerate box ({x0}, {y0}, {x1}, {y1})")
    return BoundingBox(x0, y0, x1, y1)


def full_image_box(width: int, height: int) -> BoundingBox:
    return BoundingBox(0, 0, width, height)


@dataclass(frozen=True)
class ObjectRegion:
    box: BoundingBox
    density: float

    @property
    def pose_bits(self) -> int:
        """Pose-word width B' = ceil(log2 A), at least one bit."""
        return pose_bits(self.box)


def pose_bits(box: BoundingBox) -> int:
    area = int(round(box.area))
    return max(1, math.ceil(math.log2(area))) if area > 1 else 1


@dataclass(frozen=True)
class ObjectCluster:
    id: int
    regions: tuple[ObjectRegion, ...]
    is_background: bool = False

    @property
    def boxes(self) -> list[BoundingBox]:
        return [r.box for r in self.regions]

    def contains(self, keypoints: np.ndarray) -> np.ndarray:
        mask = np.zeros(len(np.asarray(keypoints).reshape(-1, 2)), dtype=bool)
        for r in self.regions:
            mask |= r.box.contains(keypoints)
        return mask


def score_density(box: BoundingBox, keypoints: np.ndarray) -> float:
    """Visual words per pixel inside ``box``."""
    area = box.area
    if area <= 0:
        raise MalformedInputError(f"zero-area box {tuple(box)}")
    return int(box.contains(keypoints).sum()) / area


def select_proposals(raw: Sequence[BoundingBox], keypoints: np.ndarray,
                     max_keep: int = MAX_PROPOSALS,
                     overlap_thresh: float = OVERLAP_THRESH) -> list[ObjectRegion]:
    """Keep the densest proposals, dropping near-duplicates of denser ones.

    Two boxes are near-duplicates when intersection / min(area) exceeds
    ``overlap_thresh``. Density ties prefer the smaller box, then input order.
    """
    if not raw:
        return []
    boxes = np.array([tuple(b) for b in raw], dtype=np.float64)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    if (areas <= 0).any():
        raise MalformedInputError("proposal with non-positive area")
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    counts = np.array([inside(kp, b).sum() for b in boxes], dtype=np.float64)
    density = counts / areas
    order = np.lexsort((np.arange(len(boxes)), areas, -density))

    kept: list[int] = []
    kb = np.empty((0, 4))
    ka = np.empty(0)
    for i in order:
        if len(kept) >= max_keep:
            break
        b = boxes[i]
        if kept:
            w = np.minimum(kb[:, 2], b[2]) - np.maximum(kb[:, 0], b[0])
            h = np.minimum(kb[:, 3], b[3]) - np.maximum(kb[:, 1], b[1])
            inter = np.where((w > 0) & (h > 0), w * h, 0.0)
            ratio = inter / np.minimum(ka, areas[i])
            if (ratio > overlap_thresh).any():
                continue
        kept.append(int(i))
        kb = np.vstack([kb, b])
        ka = np.append(ka, areas[i])
    return [ObjectRegion(BoundingBox(*raw[i]), float(density[i])) for i in kept]


def cluster_regions(regions: Sequence[ObjectRegion], width: int, height: int) -> list[ObjectCluster]:
    """Connected components of the box-overlap graph plus one background cluster.

    Boxes that merely share an edge do not overlap. Object clusters are
    numbered by their top-left-most region (x0, then y0); the background
    cluster takes the last id.
    """
    n = len(regions)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if regions[i].box.overlaps(regions[j].box):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    comps = sorted(groups.values(),
                   key=lambda g: min((regions[i].box.x0, regions[i].box.y0, i) for i in g))
    clusters = [ObjectCluster(k, tuple(regions[i] for i in g)) for k, g in enumerate(comps)]
    full = full_image_box(width, height)
    clusters.append(ObjectCluster(len(clusters), (ObjectRegion(full, 0.0),), is_background=True))
    return clusters


def background_only(width: int, height: int) -> list[ObjectCluster]:
    return cluster_regions([], width, height)


def grid_proposals(width: int, height: int, scales: Sequence[float] = (0.125, 0.25, 0.5),
                   stride: float = 0.5) -> list[BoundingBox]:
    """Multi-scale sliding windows, for datasets without a proposal file."""
    out = []
    for s in scales:
        w, h = max(2, int(width * s)), max(2, int(height * s))
        sx, sy = max(1, int(w * stride)), max(1, int(h * stride))
        for y in range(0, height - h + 1, sy):
            for x in range(0, width - w + 1, sx):
                out.append(BoundingBox(x, y, x + w, y + h))
    return out


def load_proposals(path: str | Path) -> dict[str, list[BoundingBox]]:
    out: dict[str, list[BoundingBox]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image_id = str(rec["image_id"])
                boxes = [make_box(*map(float, b)) for b in rec["boxes"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), record=f"line {lineno}") from exc
            if image_id in out:
                raise ParseError(f"duplicate image_id {image_id!r}", record=f"line {lineno}")
            out[image_id] = boxes
    return out


def save_proposals(path: str | Path, proposals: dict[str, Sequence[BoundingBox]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, boxes in proposals.items():
            rec = {"image_id": image_id, "boxes": [[_num(v) for v in b] for b in boxes]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)

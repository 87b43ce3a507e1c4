"""Change scoring of query features and diversity-aware re-ranking."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .proposals import BoundingBox, ObjectCluster
from .registration import MARGIN_FRACTION, LinearTransform, VisibleRegion, transform_box


@dataclass(frozen=True)
class RankedFeature:
    index: int
    x: float
    y: float
    clusters: tuple[int, ...]  # reference clusters the feature was scored against
    p: float
    query_cluster: int  # -1 when isolated
    r: int
    score: float
    excluded: bool = False

    @property
    def isolated(self) -> bool:
        return self.query_cluster < 0


def assign_clusters(keypoints: np.ndarray, cluster_boxes: Sequence[Sequence[BoundingBox]],
                    transform: LinearTransform, region: VisibleRegion, width: int, height: int,
                    margin_fraction: float = MARGIN_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Membership matrix (features x clusters) and the out-of-view mask.

    Each reference cluster's boxes are mapped into the query frame and grown by
    the margin; features outside the query-side visible region get no clusters.
    """
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    member = np.zeros((len(kp), len(cluster_boxes)), dtype=bool)
    for c, boxes in enumerate(cluster_boxes):
        for b in boxes:
            member[:, c] |= transform_box(b, transform, width, height, margin_fraction).contains(kp)
    excluded = ~region.contains_query(kp)
    member[excluded] = False
    return member, excluded


def score_features(descriptors: np.ndarray, member: np.ndarray, classifiers: Sequence) -> np.ndarray:
    """p = min over assigned clusters of that cluster's change probability.

    Features with no assigned cluster get p = 1: no learned object explains them.
    """
    p = np.ones(len(member))
    for c, clf in enumerate(classifiers):
        rows = np.flatnonzero(member[:, c])
        if len(rows):
            p[rows] = np.minimum(p[rows], clf.predict_change_prob(descriptors[rows]))
    return p


def query_cluster_of(keypoints: np.ndarray, clusters: Sequence[ObjectCluster]) -> np.ndarray:
    """Unique query cluster per feature: the one whose containing region is densest.

    Density ties go to the lowest cluster id; -1 marks features in no cluster.
    """
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    best = np.full(len(kp), -1, dtype=np.int64)
    best_density = np.full(len(kp), -np.inf)
    for cl in sorted(clusters, key=lambda c: c.id):
        if cl.is_background:
            continue
        for region in cl.regions:
            hit = region.box.contains(kp) & (region.density > best_density)
            best[hit] = cl.id
            best_density[hit] = region.density
    return best


def nms_rerank(keypoints: np.ndarray, p: np.ndarray, query_cluster: np.ndarray,
               excluded: np.ndarray | None = None, isolated: np.ndarray | None = None,
               member: np.ndarray | None = None, suppression: bool = True) -> list[RankedFeature]:
    """Rank features by r + (1 - p), r being the rank by p inside the query cluster.

    Isolated features take r = C_max + 1 where C_max is the largest cluster's
    feature count. Excluded features are placed after everything else with
    score C_max + 2. Without suppression the order is by descending p alone.
    """
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(p, dtype=np.float64)
    n = len(p)
    excluded = np.zeros(n, dtype=bool) if excluded is None else np.asarray(excluded, dtype=bool)
    qc = np.asarray(query_cluster, dtype=np.int64).copy()
    if isolated is not None:
        qc[np.asarray(isolated, dtype=bool)] = -1
    qc[excluded] = -1
    candidates = np.flatnonzero(~excluded)

    r = np.zeros(n, dtype=np.int64)
    score = np.zeros(n)
    if suppression:
        in_cluster = candidates[qc[candidates] >= 0]
        c_max = 0
        for cid in np.unique(qc[in_cluster]):
            rows = in_cluster[qc[in_cluster] == cid]
            rows = rows[np.lexsort((rows, -p[rows]))]
            r[rows] = np.arange(1, len(rows) + 1)
            c_max = max(c_max, len(rows))
        lone = candidates[qc[candidates] < 0]
        r[lone] = c_max + 1
        score[candidates] = r[candidates] + (1.0 - p[candidates])
        score[excluded] = c_max + 2
        r[excluded] = c_max + 2
    else:
        order = candidates[np.lexsort((candidates, -p[candidates]))]
        r[order] = np.arange(1, len(order) + 1)
        score[candidates] = 1.0 - p[candidates]
        score[excluded] = 2.0
        r[excluded] = len(candidates) + 1

    # r breaks float ties in the score, e.g. 1 - p rounding to 1 for tiny p.
    order = np.lexsort((np.arange(n), r, score, excluded))
    out = []
    for i in order:
        cl = tuple(np.flatnonzero(member[i]).tolist()) if member is not None else ()
        out.append(RankedFeature(int(i), float(kp[i, 0]), float(kp[i, 1]), cl, float(p[i]),
                                 int(qc[i]), int(r[i]), float(score[i]), bool(excluded[i])))
    return out


RANKING_COLUMNS = ["collection_id", "image_id", "feature_index", "x", "y", "p", "r", "score",
                   "is_ground_truth_change"]


def write_ranking_csv(path: str | Path, rows: Sequence[dict], header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=RANKING_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in RANKING_COLUMNS})


def ranking_rows(ranked: Sequence[RankedFeature], image_id: str, collection_id: str = "",
                 truth: np.ndarray | None = None) -> list[dict]:
    return [{
        "collection_id": collection_id, "image_id": image_id, "feature_index": f.index,
        "x": f.x, "y": f.y, "p": repr(f.p), "r": f.r, "score": repr(f.score),
        "is_ground_truth_change": int(bool(truth[f.index])) if truth is not None else 0,
    } for f in ranked]

"""Change detection for one query image against a reference image's place model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .compressed_map import Classifier, CompressedMap, ImageRecord, image_clusters
from .errors import ConfigError
from .evaluation import ImageScores, Pair
from .features import ImageFeatures
from .proposals import BoundingBox
from .ranking import RankedFeature, assign_clusters, nms_rerank, query_cluster_of, score_features
from .registration import DELTA, MARGIN_FRACTION, VISIBILITY_MODES, Registration, register
from .vocabulary import Vocabulary


@dataclass(frozen=True)
class DetectConfig:
    delta: float = DELTA
    visibility: str = "hv"
    margin: float = MARGIN_FRACTION
    suppression: bool = True

    def __post_init__(self):
        if not 0 <= self.delta < 0.5:
            raise ConfigError("delta must lie in [0, 0.5)")
        if self.visibility not in VISIBILITY_MODES:
            raise ConfigError(f"unknown visibility mode {self.visibility!r}")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")


@dataclass(frozen=True, eq=False)
class Detection:
    ranked: list[RankedFeature] = field(repr=False)
    registration: Registration
    p: np.ndarray = field(repr=False)
    member: np.ndarray = field(repr=False)
    excluded: np.ndarray = field(repr=False)

    @property
    def scored(self) -> np.ndarray:
        """Features inside the visible region with at least one reference cluster."""
        return ~self.excluded & self.member.any(axis=1)

    def max_p(self) -> float:
        return float(self.p[self.scored].max(initial=0.0))

    def scores(self) -> np.ndarray:
        """Final augmented scores aligned with feature indices."""
        out = np.empty(len(self.ranked))
        for f in self.ranked:
            out[f.index] = f.score
        return out


def detect(query: ImageFeatures, query_boxes: Sequence[BoundingBox] | None, record: ImageRecord,
           classifiers: Sequence[Classifier], vocab: Vocabulary, cfg: DetectConfig = DetectConfig(),
           query_words: np.ndarray | None = None) -> Detection:
    """Register, score every query feature, then re-rank with query-side suppression."""
    if len(classifiers) != len(record.clusters):
        raise ValueError("one classifier per reference cluster expected")
    if query_words is None:
        query_words = vocab.quantize_many(query.descriptors)
    r_words, r_kp = record.words_and_keypoints()
    reg = register(query_words, query.keypoints, r_words, r_kp, cfg.delta, cfg.visibility)
    member, excluded = assign_clusters(query.keypoints, [c.regions for c in record.clusters],
                                       reg.transform, reg.region, query.width, query.height, cfg.margin)
    p = score_features(query.descriptors, member, classifiers)
    qclusters = image_clusters(query, query_boxes, True)
    qc = query_cluster_of(query.keypoints, qclusters)
    ranked = nms_rerank(query.keypoints, p, qc, excluded, None, member, cfg.suppression)
    return Detection(ranked, reg, p, member, excluded)


class MapDetector:
    """Scores annotated pairs against a map store, decompressing places on demand."""

    def __init__(self, store: CompressedMap, vocab: Vocabulary, queries: Mapping[str, ImageFeatures],
                 query_proposals: Mapping[str, Sequence[BoundingBox]], cfg: DetectConfig = DetectConfig()):
        self.store = store
        self.vocab = vocab
        self.queries = queries
        self.query_proposals = query_proposals
        self.cfg = cfg
        self._place_of: dict[str, int] = {}
        for i, place in enumerate(store.places):
            for img in place.images:
                self._place_of[img.image_id] = i

    def model(self, ref_id: str) -> tuple[ImageRecord, tuple[Classifier, ...]]:
        try:
            pid = self._place_of[ref_id]
        except KeyError:
            raise KeyError(f"reference image {ref_id!r} not in map") from None
        place = self.store.places[pid]
        if place.compressed:
            place = self.store.decompress(pid, self.vocab)
        return place.image(ref_id)

    def detect(self, query_id: str, ref_id: str) -> Detection:
        rec, clfs = self.model(ref_id)
        q = self.queries[query_id]
        return detect(q, self.query_proposals.get(query_id), rec, clfs, self.vocab, self.cfg)

    def __call__(self, pair: Pair) -> ImageScores:
        det = self.detect(pair.query_id, pair.ref_id)
        q = self.queries[pair.query_id]
        return ImageScores(det.scores(), det.excluded.copy(), pair.truth_mask(q.keypoints))

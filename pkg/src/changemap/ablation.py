"""Method variants evaluated on shared collections."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .classifiers import ClassifierConfig
from .compressed_map import CompressedMap, PlaceModel, build_place_models
from .evaluation import Collection, SuccessCurve, evaluate
from .features import ImageFeatures
from .mining import MiningConfig
from .pipeline import DetectConfig, MapDetector
from .proposals import BoundingBox
from .vocabulary import Vocabulary

AXES = ("object", "classifier", "mining", "visibility")


@dataclass(frozen=True)
class Variant:
    """One pipeline configuration. Fields that change the map form its build key."""

    axis: str
    name: str
    object_level: bool = True
    classifier: ClassifierConfig = ClassifierConfig()
    mining: MiningConfig = MiningConfig()
    detect: DetectConfig = DetectConfig()

    @property
    def build_key(self) -> tuple:
        return (self.object_level, self.classifier, self.mining.strategy, self.mining.min_neg_distance,
                self.mining.max_examples)


def variants(axes: Sequence[str] = AXES, base: Variant | None = None) -> list[Variant]:
    """The ablation menu: each axis varies one component of ``base``."""
    base = base or Variant("base", "base")
    out = []
    for axis in axes:
        if axis == "object":
            out += [replace(base, axis=axis, name="object"),
                    replace(base, axis=axis, name="non-object", object_level=False),
                    replace(base, axis=axis, name="non-suppression",
                            detect=replace(base.detect, suppression=False))]
        elif axis == "classifier":
            out.append(replace(base, axis=axis, name="nn", classifier=replace(base.classifier, kind="nn")))
            for k in ("linear", "sigmoid", "polynomial", "rbf"):
                out.append(replace(base, axis=axis, name=f"svm-{k}",
                                   classifier=replace(base.classifier, kind="svm", kernel=k)))
        elif axis == "mining":
            for bits in (10, 20, 30):
                out.append(replace(base, axis=axis, name=f"uniform@{bits}",
                                   mining=replace(base.mining, strategy="uniform", min_neg_distance=bits)))
            for strat in ("farthest", "nearest"):
                out.append(replace(base, axis=axis, name=strat,
                                   mining=replace(base.mining, strategy=strat)))
        elif axis == "visibility":
            for mode, name in (("hv", "horizontal-vertical"), ("h", "horizontal"), ("none", "none")):
                out.append(replace(base, axis=axis, name=name, detect=replace(base.detect, visibility=mode)))
        else:
            raise ValueError(f"unknown ablation axis {axis!r}; expected one of {', '.join(AXES)}")
    return out


@dataclass(frozen=True)
class AblationResult:
    variant: Variant
    curve: SuccessCurve
    clusters_per_image: Mapping[str, int]


def ablate(collections: Sequence[Collection], references: Sequence[ImageFeatures],
           reference_proposals: Mapping[str, Sequence[BoundingBox]], queries: Mapping[str, ImageFeatures],
           query_proposals: Mapping[str, Sequence[BoundingBox]], vocab: Vocabulary,
           axes: Sequence[str] = AXES, base: Variant | None = None, place_len: int = 10,
           seed: int = 0, jobs: int | None = 1) -> list[AblationResult]:
    """Evaluate every variant on the same collections.

    Only reference images used by the collections are mapped; variants that
    differ only at detection time share one map.
    """
    used = {p.ref_id for c in collections for p in c.pairs}
    refs = [r for r in references if r.image_id in used]
    words = {r.image_id: vocab.quantize_many(r.descriptors) for r in refs}
    maps: dict[tuple, list[PlaceModel]] = {}
    results = []
    for v in variants(axes, base):
        if v.build_key not in maps:
            maps[v.build_key] = build_place_models(refs, reference_proposals, vocab, v.mining, v.classifier,
                                                   place_len, seed, v.object_level, words, jobs)
        models = maps[v.build_key]
        store = CompressedMap.from_models(models, vocab, place_len, v.classifier)
        detector = MapDetector(store, vocab, queries, query_proposals, v.detect)
        curve = evaluate(collections, detector, f"{v.axis}:{v.name}", jobs=jobs)
        counts = {rec.image_id: len(rec.clusters) for m in models for rec in m.images}
        results.append(AblationResult(v, curve, counts))
    return results

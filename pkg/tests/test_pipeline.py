from __future__ import annotations

import numpy as np
import pytest

from changemap.ablation import AXES, Variant, ablate, variants
from changemap.errors import ConfigError
from changemap.evaluation import DistanceOracle, build_collections, evaluate, split_pairs
from changemap.pipeline import DetectConfig, MapDetector


@pytest.fixture
def detector(small_dataset, small_store, small_vocab):
    queries = {q.image_id: q for q in small_dataset.queries + small_dataset.reference}
    props = dict(small_dataset.query_proposals, **small_dataset.reference_proposals)
    return MapDetector(small_store, small_vocab, queries, props)


def test_identity_registration(detector, small_dataset):
    p = small_dataset.pairs[0]
    t = detector.detect(p.query_id, p.ref_id).registration.transform
    assert t.confident and (t.a, t.b, t.c, t.d) == pytest.approx((1, 0, 1, 0), abs=1e-9)


def test_change_raises_max_probability(detector, small_dataset):
    for p in small_dataset.pairs:
        if not p.is_change:
            continue
        changed = detector.detect(p.query_id, p.ref_id)
        unchanged = detector.detect(p.ref_id, p.ref_id)
        assert changed.max_p() > unchanged.max_p()
        q = small_dataset.query(p.query_id)
        truth = p.truth_mask(q.keypoints)
        assert changed.ranked[0].index in np.flatnonzero(truth)


def test_detection_ranking_is_complete(detector, small_dataset):
    p = small_dataset.pairs[1]
    det = detector.detect(p.query_id, p.ref_id)
    assert sorted(f.index for f in det.ranked) == list(range(len(small_dataset.query(p.query_id))))
    scores = [f.score for f in det.ranked]
    assert scores == sorted(scores)
    assert np.all((det.p >= 0) & (det.p <= 1))


def test_pipeline_matches_oracle_on_small_set(detector, small_dataset):
    change, noch = split_pairs(small_dataset.pairs)
    cols = build_collections(change, noch, size=4, seed=1)
    refs = {r.image_id: r for r in small_dataset.reference}
    oracle = evaluate(cols, DistanceOracle(detector.queries, refs), "oracle")
    pipe = evaluate(cols, detector, "pipeline")
    assert oracle.ranks == (1, 1, 1)
    assert pipe.ranks == (1, 1, 1)


def test_unknown_reference(detector):
    with pytest.raises(KeyError):
        detector.model("nope")


def test_detect_config_validation():
    with pytest.raises(ConfigError):
        DetectConfig(delta=0.5)
    with pytest.raises(ConfigError):
        DetectConfig(visibility="v")


def test_variant_menu():
    menu = variants()
    assert [sum(v.axis == a for v in menu) for a in AXES] == [3, 5, 5, 3]
    assert len({(v.axis, v.name) for v in menu}) == 16
    with pytest.raises(ValueError):
        variants(["colour"])


def test_object_axis_runs(small_dataset, small_vocab):
    change, noch = split_pairs(small_dataset.pairs)
    cols = build_collections(change, noch, size=3, count=2, seed=0)
    queries = {q.image_id: q for q in small_dataset.queries}
    res = ablate(cols, small_dataset.reference, small_dataset.reference_proposals, queries,
                 small_dataset.query_proposals, small_vocab, ["object"], Variant("base", "base"), 3)
    assert [r.curve.method for r in res] == ["object:object", "object:non-object", "object:non-suppression"]
    assert set(res[1].clusters_per_image.values()) == {1}
    assert min(res[0].clusters_per_image.values()) > 1

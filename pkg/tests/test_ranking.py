from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changemap.proposals import BoundingBox, ObjectCluster, ObjectRegion
from changemap.ranking import nms_rerank, query_cluster_of, score_features


class _Const:
    def __init__(self, values):
        self.values = values

    def predict_change_prob(self, desc):
        return self.values[desc[:, 0]]


def test_score_is_min_over_clusters_and_one_when_unassigned():
    desc = np.arange(4, dtype=np.uint8).reshape(4, 1)
    member = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=bool)
    clfs = [_Const(np.array([0.2, 0.7, 0.9, 0.9])), _Const(np.array([0.5, 0.1, 0.3, 0.4]))]
    assert score_features(desc, member, clfs).tolist() == [0.2, 0.7, 0.3, 1.0]


def test_query_cluster_prefers_denser_region():
    clusters = [
        ObjectCluster(0, (ObjectRegion(BoundingBox(0, 0, 10, 10), 0.1),)),
        ObjectCluster(1, (ObjectRegion(BoundingBox(5, 5, 15, 15), 0.3),)),
        ObjectCluster(2, (ObjectRegion(BoundingBox(0, 0, 100, 100), 0.0),), is_background=True),
    ]
    kp = np.array([[1, 1], [7, 7], [12, 12], [50, 50]], dtype=float)
    assert query_cluster_of(kp, clusters).tolist() == [0, 1, 1, -1]


rank_inputs = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(-1, 3), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))


@given(rank_inputs, st.booleans())
@settings(max_examples=200, deadline=None)
def test_rerank_invariants(data, suppression):
    p, qc, excl = (np.array(v) for v in data)
    n = len(p)
    kp = np.zeros((n, 2))
    ranked = nms_rerank(kp, p, qc, excl, None, None, suppression)
    assert sorted(f.index for f in ranked) == list(range(n))
    keys = [(f.excluded, f.score, f.r, f.index) for f in ranked]
    assert keys == sorted(keys)
    live = [f for f in ranked if not f.excluded]
    if not live:
        return
    if not suppression:
        assert [f.p for f in live] == sorted((f.p for f in live), reverse=True)
        return
    # ranks inside each query cluster are 1..k by descending p
    for cid in set(f.query_cluster for f in live if f.query_cluster >= 0):
        members = sorted((f for f in live if f.query_cluster == cid), key=lambda f: f.r)
        assert [f.r for f in members] == list(range(1, len(members) + 1))
        assert [f.p for f in members] == sorted((f.p for f in members), reverse=True)
    c_max = max([sum(1 for f in live if f.query_cluster == c) for c in range(4)] + [0])
    for f in live:
        assert f.score == pytest.approx(f.r + 1 - f.p)
        if f.isolated:
            assert f.r == c_max + 1
    for f in ranked:
        if f.excluded:
            assert f.score == c_max + 2


def test_suppression_interleaves_clusters():
    p = np.array([0.9, 0.8, 0.7, 0.6])
    qc = np.array([0, 0, 0, 1])
    ranked = nms_rerank(np.zeros((4, 2)), p, qc)
    assert [f.index for f in ranked] == [0, 3, 1, 2]
    plain = nms_rerank(np.zeros((4, 2)), p, qc, suppression=False)
    assert [f.index for f in plain] == [0, 1, 2, 3]

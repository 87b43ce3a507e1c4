from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changemap.proposals import BoundingBox
from changemap.registration import (LinearTransform, fit_transform, match_words, register, transform_box,
                                    trimmed_bounds, visible_region)
from oracles import least_squares_axis, percentile_bounds


def test_only_words_unique_in_both_images_match():
    qw = np.array([5, 3, 3, 9, 1])
    rw = np.array([9, 5, 7, 1, 1])
    qk = np.arange(10.0).reshape(5, 2)
    rk = np.arange(10.0, 20.0).reshape(5, 2)
    m = match_words(qw, qk, rw, rk)
    assert m.words.tolist() == [5, 9]
    assert m.query.tolist() == [[0, 1], [6, 7]]
    assert m.reference.tolist() == [[12, 13], [10, 11]]


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=60),
       st.sampled_from([0.0, 0.05, 0.1, 0.2, 0.25]))
def test_trimmed_bounds_match_sorted_oracle(values, delta):
    assert trimmed_bounds(np.array(values, float), delta) == percentile_bounds(values, delta)


def test_trimmed_bounds_on_ten_values():
    assert trimmed_bounds(np.arange(1, 11), 0.1) == (1, 9)


@given(st.floats(0.5, 2), st.floats(-50, 50), st.floats(0.5, 2), st.floats(-50, 50), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_fit_recovers_exact_transform(a, b, c, d, seed):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0, 500, size=(30, 2))
    t = LinearTransform(a, b, c, d)
    reg = register(np.arange(30), t.apply(ref), np.arange(30), ref, 0.1, "hv")
    got = reg.transform
    assert got.confident
    assert (got.a, got.b, got.c, got.d) == pytest.approx((a, b, c, d), abs=1e-6)


def test_fit_matches_normal_equations(rng):
    ref = rng.uniform(0, 100, size=(20, 2))
    qry = ref * [1.1, 0.9] + rng.normal(0, 2, size=(20, 2))
    m = match_words(np.arange(20), qry, np.arange(20), ref)
    t = fit_transform(m)
    a, b = least_squares_axis(ref[:, 0].tolist(), qry[:, 0].tolist())
    c, d = least_squares_axis(ref[:, 1].tolist(), qry[:, 1].tolist())
    assert (t.a, t.b, t.c, t.d) == pytest.approx((a, b, c, d), rel=1e-9)


def test_degenerate_fit_falls_back_to_identity():
    m = match_words(np.array([1]), np.array([[3.0, 4.0]]), np.array([1]), np.array([[1.0, 1.0]]))
    t = fit_transform(m)
    assert not t.confident and (t.a, t.b, t.c, t.d) == (1, 0, 1, 0)


def test_visibility_modes():
    q = np.column_stack([np.arange(1, 11.0), np.arange(101, 111.0)])
    m = match_words(np.arange(10), q, np.arange(10), q)
    assert visible_region(m, 0.1, "hv").query == (1, 101, 9, 109)
    assert visible_region(m, 0.1, "h").query == (1, None, 9, None)
    assert visible_region(m, 0.1, "none").contains_query(np.array([[-1e9, 1e9]])).all()
    empty = visible_region(m.subset(np.zeros(10, bool)), 0.1, "hv")
    assert not empty.confident and empty.contains_query(np.array([[5.0, 5.0]])).all()


def test_transform_box_margin_and_clipping():
    t = LinearTransform(2, 10, 1, 0)
    box = transform_box(BoundingBox(10, 10, 20, 20), t, 100, 80, 0.1)
    assert box == BoundingBox(20, 0, 60, 30)
    assert transform_box(BoundingBox(0, 0, 100, 80), LinearTransform(), 100, 80, 0.1) == BoundingBox(0, 0, 100, 80)

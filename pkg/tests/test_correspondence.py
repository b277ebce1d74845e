import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icpviz.cloud import build_nn_index
from icpviz.correspondence import closest_point, reciprocal


def test_closest_point_pairs_every_source_point(backend):
    Q = np.array([[0, 0, 0], [10, 0, 0]], float)
    X = np.array([[1, 0, 0], [9, 0, 0], [4, 0, 0]], float)
    c = closest_point(X, build_nn_index(Q, backend))
    np.testing.assert_array_equal(c.target, [0, 1, 0])
    np.testing.assert_allclose(c.distance, [1, 1, 4])


def test_closest_point_rejects_empty_source():
    with pytest.raises(ValueError):
        closest_point(np.empty((0, 3)), build_nn_index(np.zeros((1, 3))))


def test_reciprocal_drops_one_sided_pairs():
    Q = np.array([[0, 0, 0]], float)
    X = np.array([[1, 0, 0], [3, 0, 0]], float)
    c = reciprocal(X, Q)
    assert c.pairs() == {(0, 0)}


def test_reciprocal_relaxation_keeps_nearby_partners():
    Q = np.array([[0, 0, 0]], float)
    X = np.array([[1, 0, 0], [1.5, 0, 0], [5, 0, 0]], float)
    assert reciprocal(X, Q, relaxation=0.5).pairs() == {(0, 0), (1, 0)}
    assert reciprocal(X, Q, relaxation=10.0).pairs() == {(0, 0), (1, 0), (2, 0)}


def test_reciprocal_rejects_negative_relaxation():
    with pytest.raises(ValueError):
        reciprocal(np.zeros((1, 3)), np.zeros((1, 3)), relaxation=-1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 2))
def test_reciprocal_subset_and_monotone(seed, r):
    rng = np.random.default_rng(seed)
    X, Q = rng.normal(size=(60, 3)), rng.normal(size=(40, 3))
    full = closest_point(X, build_nn_index(Q)).pairs()
    strict = reciprocal(X, Q).pairs()
    relaxed = reciprocal(X, Q, r).pairs()
    assert strict <= relaxed <= full
    # strict pairs are mutual nearest neighbours
    back = build_nn_index(X).query(Q)[0]
    assert all(back[j] == i for i, j in strict)

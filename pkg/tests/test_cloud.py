import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_knn
from icpviz.cloud import (
    NearestNeighborIndex,
    PointCloud,
    build_voxel_occupancy,
    covariance_eigen,
    covariance_eigen_batch,
    estimate_normals,
    knn,
    voxel_keys,
)


def test_cloud_rejects_bad_shapes():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_empty_cloud_allowed_but_not_indexable():
    c = PointCloud(np.empty((0, 3)))
    assert len(c) == 0
    with pytest.raises(ValueError):
        NearestNeighborIndex(c.points)


def test_cloud_is_immutable():
    c = PointCloud([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        c.points[0, 0] = 5.0


def test_knn_hand_example(backend):
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [3, 0, 0]], float)
    idx = NearestNeighborIndex(pts, backend)
    assert knn(idx, [0.9, 0, 0], 2) == [(1, pytest.approx(0.1)), (0, pytest.approx(0.9))]


def test_knn_ties_prefer_lower_index(backend):
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], float)
    idx = NearestNeighborIndex(pts, backend)
    got, d = idx.query_knn(np.zeros((1, 3)), 4)
    np.testing.assert_array_equal(got[0], [0, 1, 2, 3])
    np.testing.assert_array_equal(d[0], [1, 1, 1, 1])


def test_knn_duplicates(backend):
    pts = np.array([[0, 0, 0]] * 5 + [[1, 1, 1]], float)
    got, _ = NearestNeighborIndex(pts, backend).query_knn(np.array([[0.1, 0, 0]]), 6)
    np.testing.assert_array_equal(got[0], [0, 1, 2, 3, 4, 5])


def test_knn_k_out_of_range(backend):
    idx = NearestNeighborIndex(np.zeros((3, 3)), backend)
    for k in (0, 4):
        with pytest.raises(ValueError):
            idx.query_knn(np.zeros((1, 3)), k)


@pytest.mark.parametrize("k", [1, 2, 5, 17])
def test_knn_matches_linear_scan_on_lattice(backend, k):
    # lattice points produce many exact ties
    g = np.arange(6, dtype=float)
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    q = np.random.default_rng(k).integers(-1, 7, size=(200, 3)) * 0.5
    got, d = NearestNeighborIndex(pts, backend).query_knn(q, k)
    want, d2 = brute_knn(pts, q, k)
    np.testing.assert_array_equal(got, want)
    np.testing.assert_array_equal(d, np.sqrt(d2))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(1, 8), st.integers(0, 2**31))
def test_knn_property_random(n, k, seed):
    k = min(k, n)
    r = np.random.default_rng(seed)
    pts = r.normal(size=(n, 3))
    q = r.normal(size=(20, 3))
    want, _ = brute_knn(pts, q, k)
    for b in ("numpy",) + (("numba",) if _has_numba() else ()):
        got, _ = NearestNeighborIndex(pts, b).query_knn(q, k)
        np.testing.assert_array_equal(got, want)


def _has_numba():
    from icpviz._accel import HAVE_NUMBA

    return HAVE_NUMBA


@pytest.mark.skipif(not _has_numba(), reason="numba unavailable")
def test_backends_bit_identical(rng):
    pts = np.round(rng.uniform(-5, 5, size=(3000, 3)), 1)
    q = np.round(rng.uniform(-6, 6, size=(2000, 3)), 1)
    a = NearestNeighborIndex(pts, "numba")
    b = NearestNeighborIndex(pts, "numpy")
    for k in (1, 4, 10):
        ia, da = a.query_knn(q, k)
        ib, db = b.query_knn(q, k)
        np.testing.assert_array_equal(ia, ib)
        np.testing.assert_array_equal(da, db)
    np.testing.assert_array_equal(a.query(q)[0], b.query(q)[0])


def test_env_flag_selects_fallback():
    env = dict(os.environ, ICPVIZ_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from icpviz import default_backend; print(default_backend())"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_covariance_hand_values():
    evals, evecs = covariance_eigen([[1, 0, 0], [-1, 0, 0], [0, 2, 0], [0, -2, 0]])
    # population covariance: diag(0.5, 2, 0)
    np.testing.assert_allclose(evals, [2.0, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(np.abs(evecs[:, 0]), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(np.abs(evecs[:, 2]), [0, 0, 1], atol=1e-15)


def test_covariance_needs_three_points():
    with pytest.raises(ValueError):
        covariance_eigen([[0, 0, 0], [1, 1, 1]])


def test_eigen_batch_backends_agree(rng, backend):
    nb = rng.normal(size=(500, 5, 3)) * [3.0, 1.0, 0.01]
    ev, V = covariance_eigen_batch(nb, backend)
    c = nb - nb.mean(1, keepdims=True)
    C = c.transpose(0, 2, 1) @ c / 5
    np.testing.assert_allclose(C @ V, V * ev[:, None, :], atol=1e-12)
    assert np.all(np.diff(ev, axis=1) <= 0)
    np.testing.assert_allclose(np.linalg.det(V), 1.0, atol=1e-12)


def test_normals_of_plane_point_to_sensor(backend):
    g = np.arange(10, dtype=float)
    xy = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    pts = np.column_stack([xy, np.full(len(xy), -2.0)])
    c = estimate_normals(PointCloud(pts), 10, NearestNeighborIndex(pts, backend))
    assert c.normal_valid.all()
    np.testing.assert_allclose(c.normals, np.tile([0, 0, 1.0], (len(pts), 1)), atol=1e-12)


def test_normals_flag_degenerate_neighbourhoods():
    pts = np.vstack([np.zeros((5, 3)), np.eye(3) * 10])
    c = estimate_normals(PointCloud(pts), 3)
    assert not c.normal_valid[0]
    np.testing.assert_array_equal(c.normals[0], 0.0)


def test_normals_flag_collinear_neighbourhoods():
    pole = np.column_stack([np.full(12, 5.0), np.zeros(12), np.arange(12) * 0.2])
    c = estimate_normals(PointCloud(pole), 5)
    assert not c.normal_valid.any()


def test_voxel_keys_half_open():
    np.testing.assert_array_equal(voxel_keys([[0.0, 0.1, -0.05]], 0.1), [[0, 1, -1]])


def test_voxel_occupancy_groups_points():
    occ = build_voxel_occupancy(np.array([[0.01, 0, 0], [0.02, 0, 0], [0.5, 0, 0]]), 0.1)
    assert len(occ) == 2 and (0, 0, 0) in occ
    np.testing.assert_array_equal(occ.voxels[(0, 0, 0)], [0, 1])

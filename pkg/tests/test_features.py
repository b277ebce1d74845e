import numpy as np
import pytest

from icpviz.cloud import PointCloud
from icpviz.features import (
    EdgeLine,
    Label,
    fit_edge_line,
    fit_edge_lines,
    fit_planar_patch,
    fit_planar_patches,
    smoothness,
)


def test_smoothness_symmetric_collinear_is_zero():
    c = PointCloud([[1.0, 0, 0], [0.0, 0, 0], [2.0, 0, 0]])
    lab = smoothness(c, neighborhood_size=2)
    assert lab.smoothness[0] == 0.0
    assert lab.label[0] == Label.PLANAR


def test_smoothness_endpoint_hand_value():
    c = PointCloud([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    lab = smoothness(c, neighborhood_size=2)
    assert lab.smoothness[0] == 1.5
    assert lab.label[0] == Label.EDGE


def test_smoothness_origin_is_invalid():
    c = PointCloud([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
    lab = smoothness(c, neighborhood_size=2)
    assert lab.label[0] == Label.INVALID and np.isnan(lab.smoothness[0])
    assert not lab.edge[0] and not lab.planar[0]


def test_smoothness_threshold_boundary():
    # s exactly equal to the threshold counts as Edge
    c = PointCloud([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    assert smoothness(c, 2, planar_threshold=1.5).label[0] == Label.EDGE


def test_smoothness_needs_enough_points():
    with pytest.raises(ValueError):
        smoothness(PointCloud(np.eye(3)), neighborhood_size=3)


def test_plane_interior_is_planar():
    g = np.arange(-10, 11) * 0.2
    xy = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    pts = np.column_stack([xy + [10.0, 0.0], np.full(len(xy), -1.7)])
    lab = smoothness(PointCloud(pts))
    interior = (np.abs(xy) < 1.5).all(axis=1)
    assert lab.planar[interior].all()


def test_edge_line_through_collinear_points():
    pts = np.array([[0, 0, z] for z in (0.0, 0.2, 0.4, 0.6, 0.8)]) + [5.0, 1.0, 0.0]
    line = fit_edge_line(pts)
    assert line is not None
    np.testing.assert_allclose(np.linalg.norm(line.q_j - line.q_k), 0.2)
    np.testing.assert_allclose((line.q_j + line.q_k) / 2, [5.0, 1.0, 0.4])


def test_edge_line_rejected_for_isotropic_set():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 0]], float)
    assert fit_edge_line(pts) is None


def test_edge_line_rejected_for_identical_points():
    assert fit_edge_line(np.ones((5, 3))) is None


@pytest.mark.parametrize("a, accepted", [(2.0, True), (np.sqrt(2.0), False)])
def test_edge_line_eigen_ratio(a, accepted):
    # variance ratio along x vs y is a^2
    pts = np.array([[-a, 0, 0], [a, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 0]], float)
    ok, _, _ = fit_edge_lines(pts[None], ratio=3.0)
    assert ok[0] == accepted


def test_planar_patch_for_square():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.5, 0]], float) + [3.0, 3.0, -1.7]
    patch = fit_planar_patch(pts)
    assert patch is not None
    np.testing.assert_allclose(np.abs(patch.normal), [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(patch.q_j, [3.5, 3.5, -1.7])


def test_planar_patch_rejected_for_line_and_thick_set():
    line = np.array([[z, 0, 0] for z in range(5)], float)
    assert fit_planar_patch(line) is None
    blob = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    assert fit_planar_patch(blob) is None


@pytest.mark.parametrize("delta", [0.1, 1.0, 0.01])
def test_fits_scale_with_half_width(delta):
    nb = np.random.default_rng(3).normal(size=(50, 5, 3)) * [1.0, 0.1, 0.001]
    ok, qj, qk = fit_edge_lines(nb, delta=delta)
    np.testing.assert_allclose(np.linalg.norm(qj - qk, axis=1), 2 * delta)
    ok, c, qk, ql, n = fit_planar_patches(nb, delta=delta)
    np.testing.assert_allclose(np.linalg.norm(qk - c, axis=1), delta)


def test_edge_line_requires_distinct_points():
    with pytest.raises(ValueError):
        EdgeLine(np.zeros(3), np.zeros(3))

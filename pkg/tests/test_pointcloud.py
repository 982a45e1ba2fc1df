"""PointCloud construction, grouping, and interpolation properties."""

import numpy as np
import pytest

from psformer.autodiff import ContractError, Tensor, backward
from psformer.pointcloud import (PointCloud, append_rel_coords, ball_group,
                                 farthest_point_sample, gather_groups,
                                 group_indices, interp_weights,
                                 interpolate_up, normalize_cloud)


def test_normalize_unit_cube_bounds():
    rng = np.random.default_rng(0)
    for _ in range(20):
        coords = rng.uniform(-50, 50, (int(rng.integers(2, 40)), 3))
        cloud = normalize_cloud(coords)
        assert cloud.norm_coords.min() >= 0.0
        assert cloud.norm_coords.max() <= 1.0 + 1e-15
        # one shared extent: aspect ratio is preserved, so the largest axis
        # spans exactly [0, 1]
        spans = cloud.norm_coords.max(axis=0) - cloud.norm_coords.min(axis=0)
        assert abs(spans.max() - 1.0) <= 1e-12
        assert cloud.extent > 0 and not cloud.degenerate


def test_normalize_preserves_shape_ratios():
    coords = np.array([[0.0, 0, 0], [4.0, 0, 0], [0.0, 2, 0]])
    cloud = normalize_cloud(coords)
    assert np.allclose(cloud.norm_coords[1], [1.0, 0, 0])
    assert np.allclose(cloud.norm_coords[2], [0.0, 0.5, 0])
    assert cloud.extent == 4.0


def test_normalize_degenerate_cloud_flagged():
    cloud = normalize_cloud(np.ones((5, 3)) * 7.0)
    assert cloud.degenerate and cloud.extent == 0.0
    assert np.all(cloud.norm_coords == 0.5)


def test_normalize_contract_errors():
    with pytest.raises(ContractError):
        normalize_cloud(np.zeros((0, 3)))
    with pytest.raises(ContractError):
        normalize_cloud(np.zeros((4, 2)))
    bad = np.zeros((3, 3))
    bad[1, 1] = np.nan
    with pytest.raises(ContractError):
        normalize_cloud(bad)


def test_default_colors_and_labels():
    cloud = normalize_cloud(np.random.default_rng(1).uniform(0, 1, (6, 3)))
    assert np.all(cloud.colors == 0.5)
    assert cloud.labels is None
    labeled = normalize_cloud(cloud.coords, labels=np.array([0, 1, 1, 0, 0, 1]))
    assert labeled.labels.dtype == bool and labeled.labels.sum() == 3


def test_features9_layout():
    rng = np.random.default_rng(2)
    coords = rng.uniform(-3, 3, (8, 3))
    colors = rng.uniform(0, 1, (8, 3))
    cloud = normalize_cloud(coords, colors)
    f = cloud.features9()
    assert f.shape == (8, 9)
    assert np.array_equal(f[:, :3], coords)
    assert np.array_equal(f[:, 3:6], colors)
    assert np.array_equal(f[:, 6:], cloud.norm_coords)


def test_permuted_cloud_reorders_everything():
    rng = np.random.default_rng(3)
    cloud = normalize_cloud(rng.uniform(0, 1, (10, 3)),
                            rng.uniform(0, 1, (10, 3)),
                            rng.integers(0, 2, 10))
    perm = rng.permutation(10)
    p = cloud.permuted(perm)
    assert np.array_equal(p.coords, cloud.coords[perm])
    assert np.array_equal(p.colors, cloud.colors[perm])
    assert np.array_equal(p.labels, cloud.labels[perm])
    assert p.extent == cloud.extent


def test_farthest_point_sample_contracts():
    coords = np.random.default_rng(4).uniform(0, 1, (9, 3))
    assert len(farthest_point_sample(coords, 4)) == 4
    cloud = normalize_cloud(coords)
    assert np.array_equal(farthest_point_sample(cloud, 4),
                          farthest_point_sample(coords, 4))
    with pytest.raises(ContractError):
        farthest_point_sample(coords, 0)
    with pytest.raises(ContractError):
        farthest_point_sample(coords, 10)


def test_ball_group_structure():
    rng = np.random.default_rng(5)
    coords = rng.uniform(0, 1, (30, 3))
    feats = rng.standard_normal((30, 5))
    centroid_idx = farthest_point_sample(coords, 6)
    groups = ball_group(coords, feats, centroid_idx, radius=0.5, k=4)
    assert groups.n_groups == 6 and groups.k == 4 and groups.d == 5
    assert np.array_equal(groups.centroid_features.data, feats[centroid_idx])
    assert np.all(groups.valid_counts >= 1)
    assert np.all(groups.valid_counts <= 4)
    # offsets are neighbor minus centroid, inside the ball
    norms = np.sqrt((groups.neighbor_rel_coords ** 2).sum(-1))
    for i in range(6):
        assert np.all(norms[i, :groups.valid_counts[i]] <= 0.5 + 1e-12)


def test_ball_group_contract_errors():
    coords = np.zeros((4, 3))
    with pytest.raises(ContractError):
        ball_group(coords, np.zeros((4, 2)), np.array([0]), radius=0.0, k=3)
    with pytest.raises(ContractError):
        ball_group(coords, np.zeros((4, 2)), np.array([0]), radius=0.5, k=0)


def test_gather_groups_routes_gradients():
    rng = np.random.default_rng(6)
    coords = rng.uniform(0, 1, (12, 3))
    feats = Tensor(rng.standard_normal((12, 4)), requires_grad=True)
    centroid_idx = farthest_point_sample(coords, 3)
    idx, counts = group_indices(coords, centroid_idx, 0.8, 5)
    groups = gather_groups(coords, feats, centroid_idx, idx, counts)
    backward(groups.neighbor_features.sum())
    # every point gathered q times accumulates gradient q
    expected = np.zeros(12)
    for row in idx.reshape(-1):
        expected[row] += 1.0
    assert np.array_equal(feats.grad[:, 0], expected)


def test_append_rel_coords_widths_and_zero_offset():
    rng = np.random.default_rng(7)
    coords = rng.uniform(0, 1, (15, 3))
    feats = rng.standard_normal((15, 4))
    centroid_idx = farthest_point_sample(coords, 4)
    groups = append_rel_coords(ball_group(coords, feats, centroid_idx, 0.6, 5))
    assert groups.neighbor_features.shape == (4, 5, 7)
    assert groups.centroid_features.shape == (4, 7)
    assert np.all(groups.centroid_features.data[:, 4:] == 0.0)
    assert np.array_equal(groups.neighbor_features.data[..., 4:],
                          groups.neighbor_rel_coords)


def test_interpolate_constant_field_exact():
    rng = np.random.default_rng(8)
    src = rng.uniform(0, 1, (9, 3))
    dst = rng.uniform(0, 1, (20, 3))
    feats = np.tile([2.5, -1.0], (9, 1))
    out = interpolate_up(src, feats, dst).data
    assert np.allclose(out, np.tile([2.5, -1.0], (20, 1)), atol=1e-12, rtol=0)


def test_interpolate_coincident_destination_copies_source():
    rng = np.random.default_rng(9)
    src = rng.uniform(0, 1, (7, 3))
    feats = rng.standard_normal((7, 3))
    out = interpolate_up(src, feats, src).data
    assert np.array_equal(out, feats)


def test_interpolate_weight_locality():
    # a destination near one source is dominated by it
    src = np.array([[0.0, 0, 0], [10.0, 0, 0], [0.0, 10, 0]])
    dst = np.array([[0.01, 0.0, 0.0]])
    idx, w = interp_weights(src, dst)
    assert idx[0, 0] == 0
    assert w[0, 0] > 0.999


def test_interpolate_requires_sources():
    with pytest.raises(ContractError):
        interpolate_up(np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((3, 3)))

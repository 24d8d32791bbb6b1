"""
Tests für die Brute-Force-Auswertung des IMLS-Feldes (field.py)
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from compact_imls.field import (
    OrientedPoint,
    PointCloud,
    covering_points,
    default_kernel_params,
    eval_sdf,
    eval_sdf_batch,
    eval_sdf_laplacian,
    eval_sdf_with_grads,
    eval_texture,
    eval_texture_with_grads,
    point_function,
    with_kernel_kind,
)
from compact_imls.kernel import KernelKind, KernelParams


def single_point_cloud():
    return PointCloud.from_points([OrientedPoint(np.zeros(3), np.array([0.0, 0.0, 1.0]), KernelParams(1.0, 1.0))])


def central_cloud(seed=0, n=10, feature_dim=0):
    rng = np.random.default_rng(seed)
    positions = 0.5 + rng.uniform(-0.1, 0.1, size=(n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(
        positions,
        normals,
        rng.uniform(0.04, 0.06, n),
        rng.uniform(1.5, 3.0, n),
        rng.uniform(0, 1, size=(n, feature_dim)),
    )


def test_point_function():
    point = OrientedPoint(np.zeros(3), np.array([0.0, 0.0, 1.0]), KernelParams(1.0, 1.0))
    assert point_function([0.0, 0.0, 0.3], point) == pytest.approx(0.3)


def test_single_point_sdf_is_point_function():
    cloud = single_point_cloud()
    assert eval_sdf([0.0, 0.0, 0.3], cloud) == pytest.approx(0.3)


def test_uncovered_query_returns_none():
    cloud = single_point_cloud()
    assert eval_sdf([2.0, 0.0, 0.0], cloud) is None
    assert eval_texture([2.0, 0.0, 0.0], cloud) is None
    values, covered = eval_sdf_batch([[2.0, 0.0, 0.0], [0.0, 0.0, 0.3]], cloud)
    assert np.isnan(values[0]) and not covered[0]
    assert covered[1] and values[1] == pytest.approx(0.3)


def test_empty_cloud_rejected():
    empty = PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), [], [])
    with pytest.raises(ValueError):
        eval_sdf([0.5, 0.5, 0.5], empty)


def test_symmetric_pair_on_plane():
    normal = np.array([0.0, 0.0, 1.0])
    cloud = PointCloud([[0.4, 0.5, 0.5], [0.6, 0.5, 0.5]], [normal, normal], 1.0, 1.0)
    assert eval_sdf([0.5, 0.5, 0.5], cloud) == pytest.approx(0.0, abs=1e-15)


def test_affine_invariance_for_coplanar_points():
    rng = np.random.default_rng(3)
    positions = np.column_stack((rng.uniform(0.3, 0.7, (20, 2)), np.full(20, 0.5)))
    normals = np.tile([0.0, 0.0, 1.0], (20, 1))
    cloud = PointCloud(positions, normals, 0.05, 2.0)
    for q in rng.uniform(0.4, 0.6, size=(10, 3)):
        value = eval_sdf(q, cloud)
        if value is not None:
            assert value == pytest.approx(q[2] - 0.5, abs=1e-12)


def test_batch_matches_scalar():
    cloud = central_cloud(1)
    queries = np.random.default_rng(2).uniform(0.3, 0.7, size=(50, 3))
    values, covered = eval_sdf_batch(queries, cloud)
    for q, v, c in zip(queries, values, covered):
        scalar = eval_sdf(q, cloud)
        assert (scalar is not None) == c
        if c:
            assert v == pytest.approx(scalar, rel=1e-12, abs=1e-15)


def test_texture_of_constant_features():
    cloud = central_cloud(4, feature_dim=3)
    cloud.features[:] = [0.2, 0.4, 0.6]
    np.testing.assert_allclose(eval_texture([0.5, 0.5, 0.5], cloud), [0.2, 0.4, 0.6])


def test_sdf_gradients_match_finite_differences():
    cloud = central_cloud(5)
    q = np.array([0.51, 0.49, 0.5])
    value, grads = eval_sdf_with_grads(q, cloud)
    assert value == pytest.approx(eval_sdf(q, cloud))
    h = 1e-6
    for attribute, analytic in (
        ("positions", grads.d_position),
        ("normals", grads.d_normal),
        ("k", grads.d_k),
        ("m", grads.d_m),
    ):
        array = getattr(cloud, attribute).reshape(-1)
        numeric = np.zeros(array.size)
        for i in range(array.size):
            orig = array[i]
            array[i] = orig + h
            plus = eval_sdf(q, cloud)
            array[i] = orig - h
            minus = eval_sdf(q, cloud)
            array[i] = orig
            numeric[i] = (plus - minus) / (2 * h)
        np.testing.assert_allclose(analytic.reshape(-1), numeric, rtol=1e-4, atol=1e-7)


def test_sdf_gradients_uncovered_query_raises():
    with pytest.raises(ValueError):
        eval_sdf_with_grads([2.0, 2.0, 2.0], single_point_cloud())


def test_texture_gradients_match_finite_differences():
    cloud = central_cloud(6, feature_dim=2)
    q = np.array([0.5, 0.52, 0.48])
    upstream = np.array([0.7, -1.3])
    _, grads = eval_texture_with_grads(q, cloud, upstream)
    h = 1e-6

    def loss():
        return float(eval_texture(q, cloud) @ upstream)

    for attribute, analytic in (("positions", grads.d_position), ("features", grads.d_feature), ("k", grads.d_k)):
        array = getattr(cloud, attribute).reshape(-1)
        numeric = np.zeros(array.size)
        for i in range(array.size):
            orig = array[i]
            array[i] = orig + h
            plus = loss()
            array[i] = orig - h
            minus = loss()
            array[i] = orig
            numeric[i] = (plus - minus) / (2 * h)
        np.testing.assert_allclose(analytic.reshape(-1), numeric, rtol=1e-4, atol=1e-7)


def test_laplacian_matches_finite_differences():
    cloud = central_cloud(7)
    q = np.array([0.5, 0.5, 0.5])
    h = 1e-4
    center = eval_sdf(q, cloud)
    numeric = 0.0
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        numeric += (eval_sdf(q + e, cloud) - 2 * center + eval_sdf(q - e, cloud)) / h**2
    assert eval_sdf_laplacian(q, cloud) == pytest.approx(numeric, rel=1e-3, abs=1e-4)


def test_covering_points():
    cloud = PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [[0, 0, 1], [0, 0, 1]], 0.25, 1.0)
    assert covering_points([0.1, 0.0, 0.0], cloud) == [0]


def test_default_kernel_params():
    positions = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.3, 0.0, 0.0]])
    k, m = default_kernel_params(positions)
    # mittlerer NN-Abstand (0.1 + 0.1 + 0.2) / 3
    spacing = 0.4 / 3
    np.testing.assert_allclose(k, (4 * spacing) ** 2 / 2)
    np.testing.assert_allclose(m, 2.0)
    k_single, _ = default_kernel_params(positions[:1])
    assert k_single[0] == pytest.approx((4 / 32) ** 2 / 2)


def test_with_kernel_kind_matches_support():
    cloud = central_cloud(8)
    exp_cloud = with_kernel_kind(cloud, KernelKind.EXPONENTIAL)
    np.testing.assert_allclose(exp_cloud.k * 9.0, cloud.k * cloud.m)
    assert with_kernel_kind(cloud, KernelKind.COMPACT).k is not cloud.k


def test_from_points_roundtrip_attributes():
    cloud = central_cloud(9, n=4, feature_dim=3)
    rebuilt = PointCloud.from_points(cloud.points)
    np.testing.assert_array_equal(rebuilt.positions, cloud.positions)
    np.testing.assert_array_equal(rebuilt.features, cloud.features)
    assert rebuilt.feature_dim == 3


@pytest.mark.parametrize("kind", list(KernelKind))
def test_sdf_within_range_of_covering_plane_distances(kind):
    cloud = with_kernel_kind(central_cloud(10, n=30), kind)
    rng = np.random.default_rng(11)
    checked = 0
    for q in rng.uniform(0.35, 0.65, size=(200, 3)):
        value = eval_sdf(q, cloud, kind)
        if value is None:
            continue
        ids = covering_points(q, cloud, kind)
        omega = np.einsum("ij,ij->i", q - cloud.positions[ids], cloud.normals[ids])
        assert omega.min() - 1e-12 <= value <= omega.max() + 1e-12
        checked += 1
    assert checked > 100


@pytest.mark.parametrize("kind", list(KernelKind))
def test_weights_are_partition_of_unity(kind):
    cloud = with_kernel_kind(central_cloud(12, n=20, feature_dim=2), kind)
    rng = np.random.default_rng(13)
    for q in rng.uniform(0.42, 0.58, size=(50, 3)):
        _, grads = eval_texture_with_grads(q, cloud, np.ones(2), kind)
        # dC/dc_i = w_i · upstream
        assert abs(grads.d_feature[:, 0].sum() - 1.0) < 1e-10
        np.testing.assert_array_equal(grads.d_feature[:, 0], grads.d_feature[:, 1])


@pytest.mark.parametrize("kind", list(KernelKind))
def test_single_point_gradients(kind):
    cloud = with_kernel_kind(single_point_cloud(), kind)
    q = np.array([0.1, -0.2, 0.3])
    value, grads = eval_sdf_with_grads(q, cloud, kind=kind)
    assert value == pytest.approx(0.3)
    np.testing.assert_allclose(grads.d_normal[0], q, atol=1e-12)
    np.testing.assert_allclose(grads.d_position[0], [0.0, 0.0, -1.0], atol=1e-10)
    assert abs(grads.d_k[0]) < 1e-10
    assert abs(grads.d_m[0]) < 1e-10


@pytest.mark.parametrize("kind", list(KernelKind))
def test_zero_upstream_gives_zero_gradients(kind):
    cloud = with_kernel_kind(central_cloud(14, feature_dim=3), kind)
    q = np.array([0.5, 0.5, 0.5])
    _, sdf_grads = eval_sdf_with_grads(q, cloud, upstream=0.0, kind=kind)
    _, tex_grads = eval_texture_with_grads(q, cloud, np.zeros(3), kind)
    for grads in (sdf_grads, tex_grads):
        for values in (grads.d_position, grads.d_normal, grads.d_k, grads.d_m, grads.d_feature):
            assert np.all(values == 0.0)


def random_small_cloud(rng):
    positions = 0.5 + rng.uniform(-0.05, 0.05, size=(5, 3))
    normals = rng.normal(size=(5, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(positions, normals, rng.uniform(0.02, 0.05, 5), rng.uniform(1.5, 3.0, 5))


@pytest.mark.parametrize("kind", list(KernelKind))
def test_sdf_gradients_over_random_configurations(kind):
    rng = np.random.default_rng(15)
    h = 1e-6
    for _ in range(100):
        cloud = with_kernel_kind(random_small_cloud(rng), kind)
        q = 0.5 + rng.uniform(-0.03, 0.03, 3)
        _, grads = eval_sdf_with_grads(q, cloud, kind=kind)
        for attribute, analytic in (
            ("positions", grads.d_position),
            ("normals", grads.d_normal),
            ("k", grads.d_k),
            ("m", grads.d_m),
        ):
            array = getattr(cloud, attribute).reshape(-1)
            numeric = np.zeros(array.size)
            for i in range(array.size):
                orig = array[i]
                array[i] = orig + h
                plus = eval_sdf(q, cloud, kind)
                array[i] = orig - h
                minus = eval_sdf(q, cloud, kind)
                array[i] = orig
                numeric[i] = (plus - minus) / (2 * h)
            np.testing.assert_allclose(analytic.reshape(-1), numeric, rtol=1e-4, atol=1e-7)


def test_empty_cloud_from_points():
    cloud = PointCloud.from_points([])
    assert len(cloud) == 0
    assert cloud.features.shape == (0, 0)

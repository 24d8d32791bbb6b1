"""
Tests für Chamfer-Distanz und Bildmetriken (metrics.py)
"""

import math
import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from compact_imls.isosurface import Mesh, marching_cubes
from compact_imls.metrics import (
    ImageBuffer,
    SpatialHash,
    chamfer_distance,
    composite_loss,
    l1,
    mesh_chamfer,
    mse,
    nearest_distances,
    psnr,
    sample_surface,
    ssim,
)
from compact_imls.shapes import CENTER, SPHERE_RADIUS, sphere_sdf
from compact_imls.splat_grid import vertex_positions


def brute_force_chamfer(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def fixture_images(seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, 48)
    base = np.outer(np.sin(3 * x), np.cos(2 * x)) * 0.4 + 0.5
    noisy = np.clip(base + rng.normal(0, 0.05, base.shape), 0, 1)
    return base, noisy


def test_chamfer_examples():
    assert chamfer_distance(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]])) == pytest.approx(1.0)
    a = np.random.default_rng(0).uniform(size=(30, 3))
    assert chamfer_distance(a, a) == 0.0


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(500, 3))
    b = rng.uniform(size=(500, 3)) * 0.5 + 0.2
    assert chamfer_distance(a, b) == pytest.approx(brute_force_chamfer(a, b), abs=1e-12)


def test_chamfer_with_far_outlier():
    rng = np.random.default_rng(2)
    a = np.vstack((rng.uniform(size=(100, 3)), [[50.0, 50.0, 50.0]]))
    b = rng.uniform(size=(80, 3))
    assert chamfer_distance(a, b) == pytest.approx(brute_force_chamfer(a, b), abs=1e-12)


def test_chamfer_rejects_empty_sets():
    with pytest.raises(ValueError):
        chamfer_distance(np.zeros((0, 3)), np.zeros((3, 3)))


def test_spatial_hash_nearest_neighbours():
    rng = np.random.default_rng(3)
    points = rng.uniform(size=(200, 3))
    queries = rng.uniform(-0.5, 1.5, size=(50, 3))
    distances, indices = SpatialHash(points).query(queries)
    d = np.linalg.norm(queries[:, None, :] - points[None, :, :], axis=2)
    np.testing.assert_allclose(distances, d.min(axis=1), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(points[indices] - queries, axis=1), distances, atol=1e-12)
    np.testing.assert_allclose(nearest_distances(queries, points), d.min(axis=1), atol=1e-12)


def test_single_point_hash():
    distances, indices = SpatialHash(np.array([[0.5, 0.5, 0.5]])).query(np.array([[0.5, 0.5, 1.5]]))
    assert distances[0] == pytest.approx(1.0)
    assert indices[0] == 0


def test_sample_surface_lies_on_triangles():
    mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), [[0, 1, 2]])
    points = sample_surface(mesh, 1000, seed=0)
    assert np.all(points[:, 2] == 0)
    assert np.all(points[:, 0] + points[:, 1] <= 1 + 1e-12)
    np.testing.assert_array_equal(points, sample_surface(mesh, 1000, seed=0))


def test_sample_surface_rejects_empty_mesh():
    with pytest.raises(ValueError):
        sample_surface(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), 10)


def test_mesh_chamfer_of_identical_sphere_is_small():
    values = sphere_sdf(vertex_positions(32)).reshape(32, 32, 32)
    mesh = marching_cubes(values)
    assert mesh_chamfer(mesh, mesh, samples=20_000) < 1e-2
    points = sample_surface(mesh, 5000)
    radial = np.abs(np.linalg.norm(points - CENTER, axis=1) - SPHERE_RADIUS)
    assert radial.max() < 2.0 / 31


def test_image_buffer_validation():
    with pytest.raises(ValueError):
        ImageBuffer(np.full((4, 4), 1.5))
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((4, 4, 2)))
    assert ImageBuffer(np.zeros((4, 5, 1))).channels == 1
    assert ImageBuffer(np.zeros((4, 5, 3))).width == 5


def test_identical_images():
    image, _ = fixture_images(0)
    assert l1(image, image) == 0.0
    assert mse(image, image) == 0.0
    assert psnr(image, image) == math.inf
    assert ssim(image, image) == pytest.approx(1.0)
    assert composite_loss(image, image) == pytest.approx(0.0, abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        l1(np.zeros((20, 20)), np.zeros((20, 21)))


def test_psnr_mse_identity():
    image, noisy = fixture_images(1)
    assert psnr(noisy, image) == pytest.approx(-10 * math.log10(mse(noisy, image)))


def test_composite_loss_mixture():
    image, noisy = fixture_images(2)
    expected = 0.8 * l1(noisy, image) + 0.2 * (1 - ssim(noisy, image)) / 2
    assert composite_loss(noisy, image) == pytest.approx(expected, rel=1e-12)
    assert composite_loss(noisy, image, lambda_mix=0.0) == pytest.approx(l1(noisy, image))
    with pytest.raises(ValueError):
        composite_loss(noisy, image, lambda_mix=1.5)


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_ssim_matches_reference(seed):
    metrics = pytest.importorskip("skimage.metrics")
    image, noisy = fixture_images(seed)
    reference = metrics.structural_similarity(
        noisy, image, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0
    )
    assert ssim(noisy, image) == pytest.approx(reference, abs=1e-4)


def test_ssim_rgb_is_channel_mean():
    image, noisy = fixture_images(6)
    rgb_a = np.stack([image, image * 0.5, image * 0.25], axis=-1)
    rgb_b = np.stack([noisy, noisy * 0.5, noisy * 0.25], axis=-1)
    channels = [ssim(rgb_b[..., c], rgb_a[..., c]) for c in range(3)]
    assert ssim(rgb_b, rgb_a) == pytest.approx(np.mean(channels))

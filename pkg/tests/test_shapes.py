"""
Tests für die synthetischen Testformen (shapes.py)
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from compact_imls.shapes import CENTER, SHAPE_KINDS, SPHERE_RADIUS, jitter_normals, sample_shape, shape_oracle


def test_sphere_samples_on_surface():
    cloud, oracle = sample_shape("sphere", 100, seed=0)
    radii = np.linalg.norm(cloud.positions - CENTER, axis=1)
    np.testing.assert_allclose(radii, SPHERE_RADIUS, atol=1e-12)
    np.testing.assert_allclose(oracle(cloud.positions), 0.0, atol=1e-12)
    np.testing.assert_allclose(cloud.normals, (cloud.positions - CENTER) / SPHERE_RADIUS, atol=1e-12)


def test_plane_point_functions_vanish():
    cloud, _ = sample_shape("plane", 50, seed=1)
    omega = np.einsum("ij,ij->i", cloud.positions - cloud.positions[0], cloud.normals[0][None, :].repeat(50, 0))
    np.testing.assert_allclose(omega, 0.0, atol=1e-15)


@pytest.mark.parametrize("kind", SHAPE_KINDS)
def test_samples_lie_on_zero_level_with_unit_normals(kind):
    cloud, oracle = sample_shape(kind, 500, seed=2)
    np.testing.assert_allclose(oracle(cloud.positions), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-12)
    # Normale zeigt zur positiven SDF-Seite
    assert np.all(oracle(cloud.positions + 1e-4 * cloud.normals) > 0)
    assert np.all((cloud.positions >= 0) & (cloud.positions <= 1))


def test_seeded_determinism():
    a, _ = sample_shape("torus", 200, noise_pos=0.01, noise_normal_deg=5.0, seed=3)
    b, _ = sample_shape("torus", 200, noise_pos=0.01, noise_normal_deg=5.0, seed=3)
    c, _ = sample_shape("torus", 200, noise_pos=0.01, noise_normal_deg=5.0, seed=4)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.normals, b.normals)
    assert not np.array_equal(a.positions, c.positions)


def test_jitter_normals_rotates_by_exact_angle():
    rng = np.random.default_rng(5)
    normals = rng.normal(size=(100, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    jittered = jitter_normals(normals, 5.0, rng)
    angles = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", normals, jittered), -1, 1)))
    np.testing.assert_allclose(angles, 5.0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(jittered, axis=1), 1.0)


def test_default_kernel_initialisation():
    cloud, _ = sample_shape("box", 300, seed=6)
    assert np.all(cloud.m == 2.0)
    assert np.all(cloud.k > 0) and np.all(cloud.k == cloud.k[0])
    assert cloud.feature_dim == 0


def test_invalid_arguments():
    with pytest.raises(ValueError):
        sample_shape("cone", 10)
    with pytest.raises(ValueError):
        sample_shape("sphere", 0)
    with pytest.raises(ValueError):
        sample_shape("sphere", 10, noise_pos=-1.0)
    with pytest.raises(ValueError):
        shape_oracle("cone")

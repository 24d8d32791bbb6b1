"""
Tests für Reflexion, Monte-Carlo-Schätzer und Abkling-Plan (filtering.py)
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC = os.path.join(ROOT, "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from compact_imls.field import PointCloud
from compact_imls.filtering import (
    FilterConfig,
    anneal_alpha,
    blur_estimate,
    filtered_field,
    grid_field,
    laplacian_estimate,
    oracle_field,
    perturb,
    reflect,
    sample_coefficients,
    spawn_rng,
)
from compact_imls.splat_grid import build_grid, sample_trilinear

Q0 = np.array([0.5, 0.5, 0.5])


def quadratic(x):
    return np.sum((x - Q0) ** 2, axis=1)


def affine(x):
    return 0.3 * x[:, 0] - 0.7 * x[:, 1] + 0.2 * x[:, 2] + 0.01


def test_reflect_examples():
    assert reflect(1.3) == pytest.approx(0.7)
    assert reflect(-0.2) == pytest.approx(0.2)
    assert reflect(2.0) == 0.0
    assert reflect(1.0) == 1.0


def test_reflect_properties():
    x = np.random.default_rng(0).uniform(-10, 10, 10_000)
    y = reflect(x)
    assert np.all((y >= 0) & (y <= 1))
    np.testing.assert_array_equal(reflect(y), y)
    np.testing.assert_allclose(reflect(x + 2.0), y, atol=1e-12)


def test_spawn_rng_streams_are_reproducible_and_distinct():
    a = spawn_rng(3, 1, 2).normal(size=5)
    b = spawn_rng(3, 1, 2).normal(size=5)
    c = spawn_rng(3, 2, 1).normal(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(alpha=-1.0).validate()
    with pytest.raises(ValueError):
        FilterConfig(mc_samples=0).validate()
    with pytest.raises(ValueError):
        FilterConfig(anneal_fraction=0.0).validate()
    FilterConfig().validate()


def test_blur_with_zero_alpha_is_exact():
    cfg = FilterConfig(alpha=0.0)
    q = np.array([0.2, 0.4, 0.9])
    assert blur_estimate(quadratic, q, cfg, spawn_rng(0)) == quadratic(q[None])[0]
    assert filtered_field(quadratic, q, cfg, spawn_rng(0)) == quadratic(q[None])[0]


def test_blur_preserves_constants():
    cfg = FilterConfig(alpha=0.01, mc_samples=64)
    queries = np.random.default_rng(1).uniform(0, 1, size=(10, 3))
    values = blur_estimate(lambda x: np.full(len(x), 0.25), queries, cfg, spawn_rng(1))
    assert np.all(values == 0.25)


def test_perturbed_positions_stay_in_cube():
    cfg = FilterConfig(alpha=0.05, mc_samples=16)
    positions, delta = perturb(np.array([[0.01, 0.99, 0.5]]), cfg, spawn_rng(2))
    assert positions.shape == (1, 16, 3) and delta.shape == (1, 16, 3)
    assert np.all((positions >= 0) & (positions <= 1))


def test_laplacian_of_affine_field_is_zero():
    cfg = FilterConfig(alpha=1e-4, mc_samples=100_000)
    value, stderr = laplacian_estimate(affine, Q0, cfg, spawn_rng(3), return_stderr=True)
    assert abs(value) <= 3 * stderr


def test_laplacian_of_quadratic_is_six():
    cfg = FilterConfig(alpha=1e-4, mc_samples=100_000)
    value, stderr = laplacian_estimate(quadratic, Q0, cfg, spawn_rng(4), return_stderr=True)
    assert abs(value - 6.0) <= 3 * stderr


def test_uncorrected_laplacian_is_biased():
    cfg = FilterConfig(alpha=1e-4, mc_samples=100_000, dim_corrected=False)
    value, stderr = laplacian_estimate(quadratic, Q0, cfg, spawn_rng(5), return_stderr=True)
    # E[‖δ‖⁴]/α² − E[‖δ‖²]/α = 15 − 3
    assert abs(value - 12.0) <= 3 * stderr


def test_laplacian_requires_positive_alpha():
    with pytest.raises(ValueError):
        laplacian_estimate(quadratic, Q0, FilterConfig(alpha=0.0), spawn_rng(0))


def test_filtered_field_combines_blur_and_laplacian():
    cfg = FilterConfig(alpha=1e-4, lambda_lap=0.5, mc_samples=100_000)
    value, stderr = filtered_field(quadratic, Q0, cfg, spawn_rng(6), return_stderr=True)
    # Weichzeichnung: 3α, Laplace: 6
    assert abs(value - (3e-4 + 0.5 * 6.0)) <= 3 * stderr


def test_blur_coefficients_sum_to_one_without_laplacian():
    cfg = FilterConfig(alpha=0.01, lambda_lap=0.0, mc_samples=8)
    _, delta = perturb(np.full((4, 3), 0.5), cfg, spawn_rng(7))
    np.testing.assert_allclose(sample_coefficients(delta, cfg).sum(axis=1), 1.0)


def test_anneal_schedule():
    cfg = FilterConfig(anneal_fraction=0.5)
    assert anneal_alpha(0, 100, 0.01, cfg) == 0.01
    assert anneal_alpha(25, 100, 0.01, cfg) == pytest.approx(0.01 * np.exp(-2.5))
    assert anneal_alpha(50, 100, 0.01, cfg) == 0.0
    assert anneal_alpha(100, 100, 0.01, cfg) == 0.0
    with pytest.raises(ValueError):
        anneal_alpha(101, 100, 0.01, cfg)
    with pytest.raises(ValueError):
        anneal_alpha(-1, 100, 0.01, cfg)


def test_anneal_schedule_is_non_increasing():
    cfg = FilterConfig()
    values = [anneal_alpha(t, 300, 0.0025, cfg) for t in range(301)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_grid_field_matches_trilinear_sampling():
    rng = np.random.default_rng(8)
    cloud = PointCloud(rng.uniform(0.3, 0.7, (50, 3)), np.tile([0.0, 0.0, 1.0], (50, 1)), 0.01, 2.0)
    _, grid = build_grid(cloud, 10)
    queries = rng.uniform(0, 1, size=(20, 3))
    np.testing.assert_array_equal(grid_field(grid)(queries), sample_trilinear(grid.sdf, queries)[0])


def test_oracle_field_uses_background_when_uncovered():
    cloud = PointCloud([[0.5, 0.5, 0.5]], [[0.0, 0.0, 1.0]], 0.01, 1.0)
    values = oracle_field(cloud, background_sdf=0.3)(np.array([[0.5, 0.5, 0.55], [0.0, 0.0, 0.0]]))
    assert values[0] == pytest.approx(0.05)
    assert values[1] == 0.3

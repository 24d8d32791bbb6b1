"""
Synthetische Testformen mit analytischer SDF

Jede Form liefert flächengleichverteilte Oberflächenpunkte mit exakten
Normalen sowie ein SDF-Orakel (Abfragen (Q,3) → (Q,)).
"""

import logging
from typing import Callable, Tuple

import numpy as np

from .field import PointCloud, default_kernel_params
from .filtering import spawn_rng

logger = logging.getLogger(__name__)

SdfOracle = Callable[[np.ndarray], np.ndarray]

CENTER = np.array([0.5, 0.5, 0.5])
SPHERE_RADIUS = 0.3
TORUS_MAJOR = 0.25
TORUS_MINOR = 0.1
BOX_HALF_EXTENTS = np.array([0.25, 0.2, 0.15])
PLANE_HEIGHT = 0.5
PLANE_MARGIN = 0.1

SHAPE_KINDS = ("sphere", "torus", "box", "plane")


def _queries(q) -> np.ndarray:
    return np.asarray(q, dtype=float).reshape(-1, 3)


def sphere_sdf(q) -> np.ndarray:
    return np.linalg.norm(_queries(q) - CENTER, axis=1) - SPHERE_RADIUS


def torus_sdf(q) -> np.ndarray:
    """Torus um die z-Achse durch das Zentrum."""
    d = _queries(q) - CENTER
    ring = np.hypot(d[:, 0], d[:, 1]) - TORUS_MAJOR
    return np.hypot(ring, d[:, 2]) - TORUS_MINOR


def box_sdf(q) -> np.ndarray:
    d = np.abs(_queries(q) - CENTER) - BOX_HALF_EXTENTS
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(d.max(axis=1), 0.0)
    return outside + inside


def plane_sdf(q) -> np.ndarray:
    return _queries(q)[:, 2] - PLANE_HEIGHT


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_sphere(n: int, rng: np.random.Generator):
    normals = _unit(rng.normal(size=(n, 3)))
    return CENTER + SPHERE_RADIUS * normals, normals


def _sample_torus(n: int, rng: np.random.Generator):
    # Flächenelement ∝ (R + r·cos v): Rejection Sampling über v
    vs = np.zeros(0)
    while len(vs) < n:
        v = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
        keep = rng.uniform(0.0, TORUS_MAJOR + TORUS_MINOR, size=2 * n) < TORUS_MAJOR + TORUS_MINOR * np.cos(v)
        vs = np.concatenate((vs, v[keep]))
    v = vs[:n]
    u = rng.uniform(0.0, 2.0 * np.pi, size=n)
    normals = np.stack((np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)), axis=1)
    ring = np.stack((np.cos(u), np.sin(u), np.zeros(n)), axis=1)
    return CENTER + TORUS_MAJOR * ring + TORUS_MINOR * normals, normals


def _sample_box(n: int, rng: np.random.Generator):
    h = BOX_HALF_EXTENTS
    # Flächen-Paare senkrecht zu x, y, z
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    sign = rng.choice((-1.0, 1.0), size=n)
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
    local[np.arange(n), axis] = sign * h[axis]
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return CENTER + local, normals


def _sample_plane(n: int, rng: np.random.Generator):
    xy = rng.uniform(PLANE_MARGIN, 1.0 - PLANE_MARGIN, size=(n, 2))
    positions = np.column_stack((xy, np.full(n, PLANE_HEIGHT)))
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    return positions, normals


_SHAPES = {
    "sphere": (_sample_sphere, sphere_sdf),
    "torus": (_sample_torus, torus_sdf),
    "box": (_sample_box, box_sdf),
    "plane": (_sample_plane, plane_sdf),
}


def shape_oracle(kind: str) -> SdfOracle:
    if kind not in _SHAPES:
        raise ValueError(f"unknown shape kind {kind!r}, expected one of {SHAPE_KINDS}")
    return _SHAPES[kind][1]


def jitter_normals(normals: np.ndarray, angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Dreht jede Normale um eine zufällige, zu ihr senkrechte Achse um genau angle_deg."""
    if angle_deg == 0:
        return normals.copy()
    axis = np.cross(normals, rng.normal(size=normals.shape))
    axis = _unit(axis)
    theta = np.deg2rad(angle_deg)
    # Rodrigues mit axis ⟂ n: n' = n·cos θ + (axis × n)·sin θ
    return _unit(normals * np.cos(theta) + np.cross(axis, normals) * np.sin(theta))


def sample_shape(
    kind: str,
    n: int,
    noise_pos: float = 0.0,
    noise_normal_deg: float = 0.0,
    seed: int = 0,
    m: float = 2.0,
) -> Tuple[PointCloud, SdfOracle]:
    """Oberflächenpunkte einer Testform plus passendes SDF-Orakel.

    Positionen werden mit N(0, noise_pos²) verrauscht und in [0,1]³ geklemmt,
    Normalen um noise_normal_deg gedreht. k, m nach der Standard-Initialisierung.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if noise_pos < 0 or noise_normal_deg < 0:
        raise ValueError("noise levels must be non-negative")
    sampler, oracle = _SHAPES.get(kind, (None, None))
    if sampler is None:
        raise ValueError(f"unknown shape kind {kind!r}, expected one of {SHAPE_KINDS}")

    rng = spawn_rng(seed)
    positions, normals = sampler(n, rng)
    if noise_pos > 0:
        positions = np.clip(positions + rng.normal(0.0, noise_pos, size=positions.shape), 0.0, 1.0)
    normals = jitter_normals(normals, noise_normal_deg, rng)
    k, m_values = default_kernel_params(positions, m=m)
    logger.debug("sample_shape: %s, n=%d, k=%.3g", kind, n, k[0])
    return PointCloud(positions, normals, k, m_values), oracle

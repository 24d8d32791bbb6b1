"""
Auswertung: symmetrische Chamfer-Distanz und Bildmetriken (L1, SSIM, D-SSIM, MSE, PSNR)
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .filtering import spawn_rng
from .isosurface import Mesh

logger = logging.getLogger(__name__)

# SSIM-Standardeinstellungen (Gauß-Fenster 11×11, σ = 1.5)
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEFAULT_LAMBDA_MIX = 0.2

_QUERY_CHUNK = 20_000
_CANDIDATE_BUDGET = 2_000_000
# Koordinaten-Offset für den Zellschlüssel (21 Bit pro Achse)
_KEY_OFFSET = 1 << 20
_KEY_SPAN = 1 << 21


@dataclass
class ImageBuffer:
    """Bild mit Werten in [0,1]; pixels hat die Form (H, W) oder (H, W, C) mit C in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim == 3 and self.pixels.shape[2] == 1:
            self.pixels = self.pixels[:, :, 0]
        if self.pixels.ndim not in (2, 3) or (self.pixels.ndim == 3 and self.pixels.shape[2] != 3):
            raise ValueError(f"expected an (H, W) or (H, W, 3) image, got shape {self.pixels.shape}")
        if self.pixels.size == 0:
            raise ValueError("image must not be empty")
        if np.any(~np.isfinite(self.pixels)) or self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


ImageLike = Union[ImageBuffer, np.ndarray]


def _pair(image: ImageLike, reference: ImageLike) -> Tuple[np.ndarray, np.ndarray]:
    a = image if isinstance(image, ImageBuffer) else ImageBuffer(image)
    b = reference if isinstance(reference, ImageBuffer) else ImageBuffer(reference)
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image dimensions differ: {a.pixels.shape} vs {b.pixels.shape}")
    return a.pixels, b.pixels


def l1(image: ImageLike, reference: ImageLike) -> float:
    a, b = _pair(image, reference)
    return float(np.mean(np.abs(a - b)))


def mse(image: ImageLike, reference: ImageLike) -> float:
    a, b = _pair(image, reference)
    return float(np.mean((a - b) ** 2))


def psnr(image: ImageLike, reference: ImageLike) -> float:
    """PSNR bei Spitzenwert 1.0; identische Bilder liefern +inf."""
    error = mse(image, reference)
    if error == 0:
        return math.inf
    return float(-10.0 * np.log10(error))


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    def _blur(x: np.ndarray) -> np.ndarray:
        return gaussian_filter(x, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    ux, uy = _blur(a), _blur(b)
    vx = _blur(a * a) - ux * ux
    vy = _blur(b * b) - uy * uy
    vxy = _blur(a * b) - ux * uy
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    pad = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(image: ImageLike, reference: ImageLike) -> float:
    """Mittlere strukturelle Ähnlichkeit, über Kanäle gemittelt (Rand von 5 Pixeln verworfen)."""
    a, b = _pair(image, reference)
    pad = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    if min(a.shape[0], a.shape[1]) <= 2 * pad:
        raise ValueError(f"images must be larger than {2 * pad} pixels per side for SSIM")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def composite_loss(image: ImageLike, reference: ImageLike, lambda_mix: float = DEFAULT_LAMBDA_MIX) -> float:
    """(1 − λ)·L1 + λ·(1 − SSIM)/2"""
    if not 0 <= lambda_mix <= 1:
        raise ValueError(f"lambda_mix must lie in [0, 1], got {lambda_mix}")
    l1_term = l1(image, reference)
    if lambda_mix == 0:
        return (1.0 - lambda_mix) * l1_term
    return (1.0 - lambda_mix) * l1_term + lambda_mix * (1.0 - ssim(image, reference)) / 2.0


@lru_cache(maxsize=64)
def _shell_offsets(ring: int) -> np.ndarray:
    axis = np.arange(-ring, ring + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).max(axis=1) == ring]


class SpatialHash:
    """Gleichförmiges Hash-Gitter für exakte Nächste-Nachbar-Suche.

    Gesucht wird ringweise (Chebyshev-Abstand der Zellen); ein Punkt in Ring
    ρ+1 oder weiter ist mindestens ρ·h entfernt, danach kann abgebrochen werden.
    """

    def __init__(self, points, cell_size: float = None):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("SpatialHash needs a nonempty point set")
        self.origin = self.points.min(axis=0)
        extent = self.points.max(axis=0) - self.origin
        if cell_size is None:
            cell_size = 1.0
            if extent.max() > 0:
                volume = float(np.prod(np.maximum(extent, 0.01 * extent.max())))
                cell_size = 1.5 * (volume / len(self.points)) ** (1.0 / 3.0)
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        self.cell_size = float(cell_size)

        cells = self._cells(self.points)
        self.cell_max = cells.max(axis=0)
        keys = self._keys(cells)
        self.order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self.order]
        self.keys, self.starts, self.counts = np.unique(sorted_keys, return_index=True, return_counts=True)

    def _cells(self, queries: np.ndarray) -> np.ndarray:
        cells = np.floor((queries - self.origin) / self.cell_size)
        return np.clip(cells, -_KEY_OFFSET + 1, _KEY_OFFSET - 1).astype(np.int64)

    @staticmethod
    def _keys(cells: np.ndarray) -> np.ndarray:
        shifted = cells + _KEY_OFFSET
        return (shifted[..., 0] * _KEY_SPAN + shifted[..., 1]) * _KEY_SPAN + shifted[..., 2]

    def query(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """Abstand und Index des nächsten Punktes für jede Anfrage."""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        distances = np.empty(len(queries))
        indices = np.empty(len(queries), dtype=np.int64)
        for start in range(0, len(queries), _QUERY_CHUNK):
            stop = min(start + _QUERY_CHUNK, len(queries))
            distances[start:stop], indices[start:stop] = self._query_chunk(queries[start:stop])
        return distances, indices

    def _query_chunk(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = len(queries)
        cells = self._cells(queries)
        # Erster Ring, der überhaupt besetzte Zellen enthalten kann, und letzter sinnvoller Ring
        below = np.maximum(-cells, 0)
        above = np.maximum(cells - self.cell_max, 0)
        ring = np.maximum(below, above).max(axis=1)
        last = np.maximum(np.abs(cells), np.abs(cells - self.cell_max)).max(axis=1)

        best = np.full(n, np.inf)
        best_idx = np.full(n, -1, dtype=np.int64)
        active = np.ones(n, dtype=bool)
        while np.any(active):
            for rho in np.unique(ring[active]):
                group = np.nonzero(active & (ring == rho))[0]
                self._scan_ring(queries, cells, group, int(rho), best, best_idx)
            done = (best <= ring * self.cell_size) | (ring >= last)
            active &= ~done
            ring[active] += 1
        return best, best_idx

    def _scan_ring(self, queries, cells, group, rho, best, best_idx) -> None:
        offsets = _shell_offsets(rho)
        step = max(1, _CANDIDATE_BUDGET // len(offsets))
        for start in range(0, len(group), step):
            self._scan_cells(queries, cells, group[start : start + step], offsets, best, best_idx)

    def _scan_cells(self, queries, cells, group, offsets, best, best_idx) -> None:
        candidate = cells[group][:, None, :] + offsets[None, :, :]
        keys = self._keys(candidate).reshape(-1)
        owner = np.repeat(group, len(offsets))
        pos = np.clip(np.searchsorted(self.keys, keys), 0, len(self.keys) - 1)
        hit = self.keys[pos] == keys
        if not np.any(hit):
            return
        owner = owner[hit]
        starts = self.starts[pos[hit]]
        counts = self.counts[pos[hit]]
        total = int(counts.sum())
        slot = np.repeat(starts - (np.cumsum(counts) - counts), counts) + np.arange(total)
        point_ids = self.order[slot]
        owner = np.repeat(owner, counts)
        diff = queries[owner] - self.points[point_ids]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))

        order = np.lexsort((point_ids, dist, owner))
        first = np.unique(owner[order], return_index=True)[1]
        winners = order[first]
        q = owner[winners]
        better = dist[winners] < best[q]
        best[q[better]] = dist[winners][better]
        best_idx[q[better]] = point_ids[winners][better]


def nearest_distances(points, reference) -> np.ndarray:
    distances, _ = SpatialHash(reference).query(points)
    return distances


def chamfer_distance(a, b) -> float:
    """½·(mittlerer Abstand a→b + mittlerer Abstand b→a)"""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer_distance needs two nonempty point sets")
    forward = float(np.mean(nearest_distances(a, b)))
    backward = float(np.mean(nearest_distances(b, a)))
    return 0.5 * (forward + backward)


def sample_surface(mesh: Mesh, n: int, seed: int = 0) -> np.ndarray:
    """Flächengleichverteilte Stichprobe von n Punkten auf dem Netz."""
    if mesh.n_triangles == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = spawn_rng(seed)
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    chosen = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.uniform(size=(n, 1)))
    r2 = rng.uniform(size=(n, 1))
    return (1 - r1) * a[chosen] + r1 * (1 - r2) * b[chosen] + r1 * r2 * c[chosen]


def mesh_chamfer(mesh_a: Mesh, mesh_b: Mesh, samples: int = 100_000, seed: int = 0) -> float:
    return chamfer_distance(
        sample_surface(mesh_a, samples, seed), sample_surface(mesh_b, samples, seed + 1)
    )

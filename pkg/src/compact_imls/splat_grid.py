"""
Grid-Splatting der Punktattribute auf ein reguläres Gitter über [0,1]³

Vorwärts: Punkte werden per Sortierung den Gitterknoten in ihrem Träger
zugeordnet (BinIndex) und dort aufsummiert. Rückwärts: Gradienten an den
Gitterknoten werden auf die Punktattribute zurückverteilt.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .field import EPS_W, AttributeGradients, PointCloud
from .kernel import KernelKind, evaluate, support_sq

logger = logging.getLogger(__name__)

# Obergrenze für Kandidaten (Punkt x Bounding-Box-Knoten) pro Block
_PAIR_BUDGET = 4_000_000

_CORNERS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)


@dataclass
class BinIndex:
    """Nach Knoten-ID sortierte (Knoten, Punkt)-Paare mit Bereichs-Offsets"""

    resolution: int
    n_points: int
    kind: KernelKind
    vertex_ids: np.ndarray
    point_ids: np.ndarray
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.vertex_ids)

    def pairs(self) -> set:
        return set(zip(self.vertex_ids.tolist(), self.point_ids.tolist()))


@dataclass
class SplatGrid:
    """Akkumulatoren und finalisierte SDF auf R³ Knoten (Knoten (i,j,l)/(R-1))"""

    resolution: int
    feature_dim: int = 0
    kind: KernelKind = KernelKind.COMPACT
    weight_sum: np.ndarray = field(default=None, repr=False)
    weighted_proj: np.ndarray = field(default=None, repr=False)
    weighted_feature: np.ndarray = field(default=None, repr=False)
    sdf: np.ndarray = field(default=None, repr=False)
    covered: np.ndarray = field(default=None, repr=False)
    background_sdf: Optional[float] = None
    finalized: bool = False

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError(f"resolution must be >= 2, got {self.resolution}")
        shape = (self.resolution,) * 3
        if self.weight_sum is None:
            self.weight_sum = np.zeros(shape)
        if self.weighted_proj is None:
            self.weighted_proj = np.zeros(shape)
        if self.weighted_feature is None:
            self.weighted_feature = np.zeros(shape + (self.feature_dim,))
        if self.sdf is None:
            self.sdf = np.zeros(shape)
        if self.covered is None:
            self.covered = np.zeros(shape, dtype=bool)

    @property
    def n_vertices(self) -> int:
        return self.resolution**3

    @property
    def spacing(self) -> float:
        return 1.0 / (self.resolution - 1)


def default_background_sdf(resolution: int) -> float:
    """Zwei Knotenabstände"""
    return 2.0 / (resolution - 1)


def vertex_coords(vertex_ids, resolution: int) -> np.ndarray:
    """Position der Knoten zu linearen IDs (x-major: id = (i·R + j)·R + l)."""
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
    r = resolution
    idx = np.stack((vertex_ids // (r * r), (vertex_ids // r) % r, vertex_ids % r), axis=-1)
    return idx / (r - 1)


def vertex_positions(resolution: int) -> np.ndarray:
    """Alle Knotenpositionen, Reihenfolge wie die linearen IDs."""
    return vertex_coords(np.arange(resolution**3), resolution)


def bin_points(cloud: PointCloud, resolution: int, kind: KernelKind = KernelKind.COMPACT) -> BinIndex:
    """Ordnet jedem Punkt alle Knoten innerhalb seines Trägerradius zu.

    Bounding-Box der Trägerkugel, danach exakter Kugeltest; anschließend
    Sortierung nach Knoten-ID (innerhalb eines Knotens nach Punkt-ID).
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    kind = KernelKind(kind)
    n = len(cloud)
    n_vertices = resolution**3
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return BinIndex(resolution, 0, kind, empty, empty, np.zeros(n_vertices + 1, dtype=np.int64))

    scale = resolution - 1
    support = support_sq(kind, cloud.k, cloud.m)
    radius = np.sqrt(support)
    lo = np.clip(np.floor((cloud.positions - radius[:, None]) * scale), 0, scale).astype(np.int64)
    hi = np.clip(np.ceil((cloud.positions + radius[:, None]) * scale), 0, scale).astype(np.int64)

    extent = (hi - lo + 1).max(axis=0)
    box = np.stack(
        np.meshgrid(*(np.arange(e) for e in extent), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    chunk = max(1, _PAIR_BUDGET // len(box))

    vertex_parts, point_parts = [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        idx = lo[start:stop, None, :] + box[None, :, :]
        valid = np.all(idx <= hi[start:stop, None, :], axis=-1)
        offsets = idx / scale - cloud.positions[start:stop, None, :]
        s = np.einsum("pbj,pbj->pb", offsets, offsets)
        valid &= s <= support[start:stop, None]
        local, slot = np.nonzero(valid)
        ijk = idx[local, slot]
        vertex_parts.append((ijk[:, 0] * resolution + ijk[:, 1]) * resolution + ijk[:, 2])
        point_parts.append(local + start)

    vertex_ids = np.concatenate(vertex_parts)
    point_ids = np.concatenate(point_parts)
    order = np.lexsort((point_ids, vertex_ids))
    vertex_ids = vertex_ids[order]
    point_ids = point_ids[order]
    counts = np.bincount(vertex_ids, minlength=n_vertices)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    logger.debug("bin_points: %d points, R=%d, %d pairs", n, resolution, len(vertex_ids))
    return BinIndex(resolution, n, kind, vertex_ids, point_ids, offsets)


def _check_match(cloud: PointCloud, index: BinIndex, grid: SplatGrid) -> None:
    if index.resolution != grid.resolution:
        raise ValueError(
            f"bin index resolution {index.resolution} does not match grid resolution {grid.resolution}"
        )
    if index.n_points != len(cloud):
        raise ValueError(f"bin index built for {index.n_points} points, cloud has {len(cloud)}")


def _accumulate(index: BinIndex, weights: np.ndarray, n_vertices: int, workers: int) -> np.ndarray:
    # Summe pro Knoten; jeder Worker besitzt einen zusammenhängenden Knotenbereich
    if workers <= 1 or n_vertices < workers:
        return np.bincount(index.vertex_ids, weights=weights, minlength=n_vertices)

    bounds = np.linspace(0, n_vertices, workers + 1).astype(np.int64)
    result = np.zeros(n_vertices)

    def _range(a: int, b: int) -> None:
        lo, hi = index.offsets[a], index.offsets[b]
        result[a:b] = np.bincount(
            index.vertex_ids[lo:hi] - a, weights=weights[lo:hi], minlength=b - a
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(_range, bounds[:-1], bounds[1:]))
    return result


def _pair_terms(cloud: PointCloud, index: BinIndex, derivatives: bool):
    offsets = vertex_coords(index.vertex_ids, index.resolution) - cloud.positions[index.point_ids]
    s = np.einsum("ij,ij->i", offsets, offsets)
    kernel = evaluate(
        index.kind, s, cloud.k[index.point_ids], cloud.m[index.point_ids], derivatives=derivatives
    )
    omega = np.einsum("ij,ij->i", offsets, cloud.normals[index.point_ids])
    return offsets, kernel, omega


def splat_forward(
    cloud: PointCloud, index: BinIndex, grid: Optional[SplatGrid] = None, workers: int = 1
) -> SplatGrid:
    """Akkumuliert γ, γ·Ω und γ·c an den Knoten (Reihenfolge: sortierte Punkt-IDs)."""
    if grid is None:
        grid = SplatGrid(index.resolution, cloud.feature_dim, index.kind)
    _check_match(cloud, index, grid)
    grid.kind = index.kind
    r = grid.resolution
    n_vertices = grid.n_vertices

    grid.weighted_feature = np.zeros((r, r, r, cloud.feature_dim))
    if len(index) == 0:
        grid.weight_sum = np.zeros((r, r, r))
        grid.weighted_proj = np.zeros((r, r, r))
    else:
        _, kernel, omega = _pair_terms(cloud, index, derivatives=False)
        gamma = kernel.value
        grid.weight_sum = _accumulate(index, gamma, n_vertices, workers).reshape(r, r, r)
        grid.weighted_proj = _accumulate(index, gamma * omega, n_vertices, workers).reshape(r, r, r)
        features = cloud.features[index.point_ids]
        for d in range(cloud.feature_dim):
            channel = _accumulate(index, gamma * features[:, d], n_vertices, workers)
            grid.weighted_feature[..., d] = channel.reshape(r, r, r)

    grid.feature_dim = cloud.feature_dim
    grid.covered = grid.weight_sum >= EPS_W
    grid.finalized = False
    return grid


def finalize(grid: SplatGrid, background_sdf: Optional[float] = None) -> SplatGrid:
    """SDF = Σγ·Ω/Σγ an abgedeckten Knoten, sonst konstante positive Hintergrund-SDF."""
    if background_sdf is None:
        background_sdf = default_background_sdf(grid.resolution)
    if background_sdf <= 0:
        raise ValueError(f"background_sdf must be positive, got {background_sdf}")
    grid.covered = grid.weight_sum >= EPS_W
    safe = np.where(grid.covered, grid.weight_sum, 1.0)
    grid.sdf = np.where(grid.covered, grid.weighted_proj / safe, background_sdf)
    grid.background_sdf = float(background_sdf)
    grid.finalized = True
    return grid


def finalize_features(grid: SplatGrid) -> np.ndarray:
    """Texturfeld pro Knoten (R,R,R,D); nicht abgedeckte Knoten erhalten 0."""
    covered = grid.weight_sum >= EPS_W
    safe = np.where(covered, grid.weight_sum, 1.0)
    return np.where(covered[..., None], grid.weighted_feature / safe[..., None], 0.0)


def splat_backward(
    cloud: PointCloud,
    index: BinIndex,
    grid: SplatGrid,
    vertex_grads,
    feature_grads=None,
) -> AttributeGradients:
    """Verteilt Knoten-Gradienten per Kettenregel auf die Punktattribute.

    Entspricht der Summe von ``field.eval_sdf_with_grads`` über alle abgedeckten
    Knoten, jeweils mit dem Knoten-Gradienten als upstream. Optional werden
    Gradienten auf das Texturfeld (R³×D) mitgenommen.
    """
    _check_match(cloud, index, grid)
    if not grid.finalized:
        raise ValueError("grid must be finalized before splat_backward")
    n_vertices = grid.n_vertices
    vertex_grads = np.asarray(vertex_grads, dtype=float).reshape(-1)
    if vertex_grads.shape != (n_vertices,):
        raise ValueError(f"vertex_grads must have {n_vertices} entries, got {vertex_grads.size}")
    if feature_grads is not None:
        feature_grads = np.asarray(feature_grads, dtype=float).reshape(n_vertices, cloud.feature_dim)

    n = len(cloud)
    grads = AttributeGradients.zeros(n, cloud.feature_dim)
    if len(index) == 0:
        return grads

    covered = grid.covered.reshape(-1)
    upstream = np.where(covered, vertex_grads, 0.0)
    active = upstream[index.vertex_ids] != 0
    if feature_grads is not None:
        active |= np.any(feature_grads[index.vertex_ids] != 0, axis=1) & covered[index.vertex_ids]
    if not np.any(active):
        return grads

    sub = BinIndex(
        index.resolution,
        index.n_points,
        index.kind,
        index.vertex_ids[active],
        index.point_ids[active],
        index.offsets,
    )
    offsets, kernel, omega = _pair_terms(cloud, sub, derivatives=True)
    vids, pids = sub.vertex_ids, sub.point_ids
    weight_sum = grid.weight_sum.reshape(-1)[vids]
    g = upstream[vids]
    weights = kernel.value / weight_sum
    residual = g * (omega - grid.sdf.reshape(-1)[vids]) / weight_sum

    d_position = -(g * weights)[:, None] * cloud.normals[pids]
    d_normal = (g * weights)[:, None] * offsets
    d_k = kernel.d_k * residual
    d_m = kernel.d_m * residual
    weight_path = kernel.d_s * residual

    d_feature = None
    if feature_grads is not None and cloud.feature_dim:
        fg = np.where(covered[vids, None], feature_grads[vids], 0.0)
        texture = grid.weighted_feature.reshape(n_vertices, -1)[vids] / weight_sum[:, None]
        feature_residual = np.einsum("pd,pd->p", cloud.features[pids] - texture, fg) / weight_sum
        d_k = d_k + kernel.d_k * feature_residual
        d_m = d_m + kernel.d_m * feature_residual
        weight_path = weight_path + kernel.d_s * feature_residual
        d_feature = weights[:, None] * fg

    d_position = d_position + weight_path[:, None] * (-2.0 * offsets)

    def _per_point(values: np.ndarray) -> np.ndarray:
        return np.bincount(pids, weights=values, minlength=n)

    grads.d_position = np.stack([_per_point(d_position[:, j]) for j in range(3)], axis=1)
    grads.d_normal = np.stack([_per_point(d_normal[:, j]) for j in range(3)], axis=1)
    grads.d_k = _per_point(d_k)
    grads.d_m = _per_point(d_m)
    if d_feature is not None:
        grads.d_feature = np.stack(
            [_per_point(d_feature[:, j]) for j in range(cloud.feature_dim)], axis=1
        )
    return grads


def trilinear_weights(resolution: int, queries) -> Tuple[np.ndarray, np.ndarray]:
    """Eck-IDs (Q,8) und trilineare Gewichte (Q,8) für Anfragen in [0,1]³."""
    queries = np.clip(np.asarray(queries, dtype=float).reshape(-1, 3), 0.0, 1.0)
    scale = resolution - 1
    scaled = queries * scale
    base = np.clip(np.floor(scaled), 0, scale - 1).astype(np.int64)
    frac = scaled - base
    corner = base[:, None, :] + _CORNERS[None, :, :]
    ids = (corner[..., 0] * resolution + corner[..., 1]) * resolution + corner[..., 2]
    w = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return ids, w.prod(axis=-1)


def sample_trilinear(values: np.ndarray, queries) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trilineare Interpolation eines Knotenfeldes (R,R,R) oder (R,R,R,D).

    Returns:
        (Werte, Eck-IDs, Gewichte)
    """
    resolution = values.shape[0]
    ids, weights = trilinear_weights(resolution, queries)
    flat = values.reshape(resolution**3, values.shape[3] if values.ndim == 4 else 1)
    sampled = np.einsum("qc,qcd->qd", weights, flat[ids])
    if values.ndim == 3:
        sampled = sampled[:, 0]
    return sampled, ids, weights


def build_grid(
    cloud: PointCloud,
    resolution: int,
    kind: KernelKind = KernelKind.COMPACT,
    background_sdf: Optional[float] = None,
    workers: int = 1,
) -> Tuple[BinIndex, SplatGrid]:
    """Binning, Splatting und Finalisierung in einem Schritt."""
    index = bin_points(cloud, resolution, kind)
    grid = splat_forward(cloud, index, workers=workers)
    return index, finalize(grid, background_sdf)

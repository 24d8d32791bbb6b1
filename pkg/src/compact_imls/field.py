"""
IMLS-Feld: Brute-Force-Auswertung von SDF und Texturfeld

Dient als Referenz (Orakel) für das Grid-Splatting. Jede Anfrage kostet O(N).
"""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .kernel import (
    KernelKind,
    KernelParams,
    check_params,
    evaluate,
    matched_exponential_k,
    support_sq,
)

# Gewichtssumme unterhalb dieser Schwelle gilt als "nicht abgedeckt" (Uncovered)
EPS_W = 1e-12

# Abstand, falls die Wolke nur einen Punkt hat
_FALLBACK_SPACING = 1.0 / 32.0

_QUERY_CHUNK = 256


@dataclass
class OrientedPoint:
    """Ein Splat: Position, Einheitsnormale, Kernparameter, Feature-Vektor"""

    position: np.ndarray
    normal: np.ndarray
    kernel: KernelParams
    feature: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class PointCloud:
    """Punktwolke als Struct-of-Arrays (N Punkte, D Features)."""

    positions: np.ndarray
    normals: np.ndarray
    k: np.ndarray
    m: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.normals = np.asarray(self.normals, dtype=float).reshape(n, 3)
        self.k = np.broadcast_to(np.asarray(self.k, dtype=float), (n,)).copy()
        self.m = np.broadcast_to(np.asarray(self.m, dtype=float), (n,)).copy()
        features = np.zeros((n, 0)) if self.features is None else np.asarray(self.features, dtype=float)
        if features.ndim == 1 and n:
            features = features.reshape(n, -1)
        dim = features.shape[-1] if features.ndim > 1 else 0
        self.features = features.reshape(n, dim)
        if n:
            check_params(self.k, self.m)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def points(self) -> Iterator[OrientedPoint]:
        for i in range(len(self)):
            yield OrientedPoint(
                self.positions[i].copy(),
                self.normals[i].copy(),
                KernelParams(float(self.k[i]), float(self.m[i])),
                self.features[i].copy(),
            )

    @classmethod
    def from_points(cls, points: Sequence[OrientedPoint]) -> "PointCloud":
        points = list(points)
        dims = {len(np.atleast_1d(p.feature)) for p in points}
        if len(dims) > 1:
            raise ValueError(f"all features must share one dimension, got {sorted(dims)}")
        dim = dims.pop() if dims else 0
        return cls(
            positions=[p.position for p in points],
            normals=[p.normal for p in points],
            k=[p.kernel.k for p in points],
            m=[p.kernel.m for p in points],
            features=np.array([np.atleast_1d(p.feature) for p in points]).reshape(
                len(points), dim
            ),
        )

    def copy(self) -> "PointCloud":
        return PointCloud(
            self.positions.copy(),
            self.normals.copy(),
            self.k.copy(),
            self.m.copy(),
            self.features.copy(),
        )


@dataclass
class AttributeGradients:
    """Gradienten pro Punkt für alle 8+D trainierbaren Parameter"""

    d_position: np.ndarray
    d_normal: np.ndarray
    d_k: np.ndarray
    d_m: np.ndarray
    d_feature: np.ndarray

    @classmethod
    def zeros(cls, n: int, feature_dim: int = 0) -> "AttributeGradients":
        return cls(
            np.zeros((n, 3)),
            np.zeros((n, 3)),
            np.zeros(n),
            np.zeros(n),
            np.zeros((n, feature_dim)),
        )

    def __iadd__(self, other: "AttributeGradients") -> "AttributeGradients":
        self.d_position += other.d_position
        self.d_normal += other.d_normal
        self.d_k += other.d_k
        self.d_m += other.d_m
        self.d_feature += other.d_feature
        return self


def default_kernel_params(positions: np.ndarray, m: float = 2.0) -> Tuple[np.ndarray, np.ndarray]:
    """Startwerte k = (4·h)²/m mit h = mittlerer Nächster-Nachbar-Abstand."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    spacing = _FALLBACK_SPACING
    if n > 1:
        distances, _ = cKDTree(positions).query(positions, k=2)
        spacing = float(np.mean(distances[:, 1]))
        if spacing <= 0:
            spacing = _FALLBACK_SPACING
    k = np.full(n, (4.0 * spacing) ** 2 / m)
    return k, np.full(n, float(m))


def point_function(query, point: OrientedPoint) -> float:
    """Signierter Abstand (q - p)·n zur Tangentialebene des Punktes."""
    query = np.asarray(query, dtype=float)
    return float(np.dot(query - point.position, point.normal))


def _contributions(query: np.ndarray, cloud: PointCloud, kind: KernelKind, derivatives: bool):
    offsets = query - cloud.positions
    s = np.einsum("ij,ij->i", offsets, offsets)
    kernel = evaluate(kind, s, cloud.k, cloud.m, derivatives=derivatives)
    omega = np.einsum("ij,ij->i", offsets, cloud.normals)
    return offsets, s, kernel, omega


def _require_cloud(cloud: PointCloud) -> None:
    if len(cloud) == 0:
        raise ValueError("field evaluation needs a nonempty point cloud")


def eval_sdf(query, cloud: PointCloud, kind: KernelKind = KernelKind.COMPACT) -> Optional[float]:
    """IMLS-SDF Σγ·Ω / Σγ an einer Anfrage; None wenn kein Punkt die Anfrage abdeckt."""
    _require_cloud(cloud)
    query = np.asarray(query, dtype=float)
    _, _, kernel, omega = _contributions(query, cloud, kind, derivatives=False)
    weight_sum = kernel.value.sum()
    if weight_sum < EPS_W:
        return None
    return float(np.dot(kernel.value, omega) / weight_sum)


def eval_texture(query, cloud: PointCloud, kind: KernelKind = KernelKind.COMPACT) -> Optional[np.ndarray]:
    """Texturfeld Σγ·c / Σγ mit denselben Gewichten wie die SDF."""
    _require_cloud(cloud)
    query = np.asarray(query, dtype=float)
    _, _, kernel, _ = _contributions(query, cloud, kind, derivatives=False)
    weight_sum = kernel.value.sum()
    if weight_sum < EPS_W:
        return None
    return kernel.value @ cloud.features / weight_sum


def eval_sdf_batch(
    queries, cloud: PointCloud, kind: KernelKind = KernelKind.COMPACT
) -> Tuple[np.ndarray, np.ndarray]:
    """Brute-Force-SDF für viele Anfragen.

    Returns:
        (values, covered): values ist an nicht abgedeckten Stellen NaN.
    """
    _require_cloud(cloud)
    queries = np.asarray(queries, dtype=float).reshape(-1, 3)
    values = np.full(len(queries), np.nan)
    covered = np.zeros(len(queries), dtype=bool)

    for start in range(0, len(queries), _QUERY_CHUNK):
        chunk = queries[start:start + _QUERY_CHUNK]
        offsets = chunk[:, None, :] - cloud.positions[None, :, :]
        s = np.einsum("qnj,qnj->qn", offsets, offsets)
        gamma = evaluate(kind, s, cloud.k[None, :], cloud.m[None, :], derivatives=False).value
        omega = np.einsum("qnj,nj->qn", offsets, cloud.normals)
        weight_sum = gamma.sum(axis=1)
        ok = weight_sum >= EPS_W
        proj = (gamma * omega).sum(axis=1)
        values[start:start + len(chunk)][ok] = proj[ok] / weight_sum[ok]
        covered[start:start + len(chunk)] = ok
    return values, covered


def eval_sdf_with_grads(
    query, cloud: PointCloud, upstream: float = 1.0, kind: KernelKind = KernelKind.COMPACT
) -> Tuple[float, AttributeGradients]:
    """SDF-Wert plus Kettenregel-Gradienten nach allen Punktattributen.

    Mit w_i = γ_i/Σγ:
        dF/dn_i = w_i·(q - p_i)
        dF/dp_i = -w_i·n_i + γ'_i·(-2(q - p_i))·(Ω_i - F)/Σγ
        dF/dk_i = ∂γ_i/∂k·(Ω_i - F)/Σγ,  analog m
    Alle Terme werden mit ``upstream`` skaliert.
    """
    _require_cloud(cloud)
    query = np.asarray(query, dtype=float)
    offsets, _, kernel, omega = _contributions(query, cloud, kind, derivatives=True)
    weight_sum = kernel.value.sum()
    if weight_sum < EPS_W:
        raise ValueError(f"query {query.tolist()} is not covered by any point")

    value = float(np.dot(kernel.value, omega) / weight_sum)
    weights = kernel.value / weight_sum
    residual = (omega - value) / weight_sum

    grads = AttributeGradients(
        d_position=upstream
        * (-weights[:, None] * cloud.normals + (kernel.d_s * residual)[:, None] * (-2.0 * offsets)),
        d_normal=upstream * weights[:, None] * offsets,
        d_k=upstream * kernel.d_k * residual,
        d_m=upstream * kernel.d_m * residual,
        d_feature=np.zeros_like(cloud.features),
    )
    return value, grads


def eval_texture_with_grads(
    query, cloud: PointCloud, upstream, kind: KernelKind = KernelKind.COMPACT
) -> Tuple[np.ndarray, AttributeGradients]:
    """Texturwert plus Gradienten; ``upstream`` ist ein D-Vektor.

    dC/dc_i = w_i·upstream; die Gewichtspfade wie bei der SDF mit c_i statt Ω_i.
    """
    _require_cloud(cloud)
    query = np.asarray(query, dtype=float)
    upstream = np.asarray(upstream, dtype=float).reshape(cloud.feature_dim)
    offsets, _, kernel, _ = _contributions(query, cloud, kind, derivatives=True)
    weight_sum = kernel.value.sum()
    if weight_sum < EPS_W:
        raise ValueError(f"query {query.tolist()} is not covered by any point")

    value = kernel.value @ cloud.features / weight_sum
    weights = kernel.value / weight_sum
    residual = ((cloud.features - value) @ upstream) / weight_sum

    grads = AttributeGradients(
        d_position=(kernel.d_s * residual)[:, None] * (-2.0 * offsets),
        d_normal=np.zeros_like(cloud.normals),
        d_k=kernel.d_k * residual,
        d_m=kernel.d_m * residual,
        d_feature=weights[:, None] * upstream[None, :],
    )
    return value, grads


def eval_sdf_laplacian(query, cloud: PointCloud, kind: KernelKind = KernelKind.COMPACT) -> Optional[float]:
    """Analytischer Laplace-Operator des IMLS-Feldes (Quotientenregel).

    ∇²F = (∇²A - F·∇²B - 2·∇B·∇F) / B mit A = Σγ·Ω, B = Σγ,
    ∇γ = 2γ'(s)·(q - p), ∇²γ = 4γ''(s)·s + 6γ'(s) in 3-D.
    """
    _require_cloud(cloud)
    query = np.asarray(query, dtype=float)
    offsets, s, kernel, omega = _contributions(query, cloud, kind, derivatives=True)
    b = kernel.value.sum()
    if b < EPS_W:
        return None
    a = np.dot(kernel.value, omega)
    value = a / b

    grad_gamma = 2.0 * kernel.d_s[:, None] * offsets
    lap_gamma = 4.0 * kernel.d_ss * s + 6.0 * kernel.d_s
    grad_b = grad_gamma.sum(axis=0)
    grad_a = (grad_gamma * omega[:, None] + kernel.value[:, None] * cloud.normals).sum(axis=0)
    lap_b = lap_gamma.sum()
    lap_a = np.sum(
        lap_gamma * omega + 2.0 * np.einsum("ij,ij->i", grad_gamma, cloud.normals)
    )
    grad_f = (grad_a - value * grad_b) / b
    return float((lap_a - value * lap_b - 2.0 * np.dot(grad_b, grad_f)) / b)


def covering_points(query, cloud: PointCloud, kind: KernelKind = KernelKind.COMPACT) -> List[int]:
    """Indizes der Punkte, deren Träger die Anfrage enthält."""
    query = np.asarray(query, dtype=float)
    offsets = query - cloud.positions
    s = np.einsum("ij,ij->i", offsets, offsets)
    return np.flatnonzero(s < support_sq(kind, cloud.k, cloud.m)).tolist()


def with_kernel_kind(cloud: PointCloud, kind: KernelKind) -> PointCloud:
    """Kopie der Wolke mit k-Werten für die gewünschte Kernart.

    Beim Exponentialkern wird r² so gesetzt, dass die Abschneidegrenze dem
    kompakten Träger sqrt(m·k) entspricht.
    """
    result = cloud.copy()
    if KernelKind(kind) is KernelKind.EXPONENTIAL:
        result.k = matched_exponential_k(cloud.k, cloud.m)
    return result

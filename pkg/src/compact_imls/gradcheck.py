"""
Gradientenprüfung per zentraler finiter Differenzen

Prüft die analytischen Ableitungen von Kern, Brute-Force-Feld, Verlust und
der vollständigen Splat-Pipeline. Wird vom CLI-Befehl ``gradcheck`` und von
den Tests verwendet.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .field import PointCloud, eval_sdf, eval_sdf_with_grads
from .filtering import FilterConfig, spawn_rng
from .kernel import KernelKind, evaluate
from .optimize import ReconstructionConfig, sdf_supervision_loss
from .splat_grid import build_grid, finalize_features, splat_backward, trilinear_weights, vertex_positions

logger = logging.getLogger(__name__)

KERNEL_STEP = 1e-6
KERNEL_RTOL = 1e-4
PIPELINE_STEP = 1e-6
PIPELINE_RTOL = 1e-3
PIPELINE_CONFIGS = 20
_ATOL = 1e-7

# Zielbereich der Prüfverluste; hält Abstand zur Abschneidekante des Exponentialkerns
TARGET_LOW = 0.35
TARGET_HIGH = 0.65


@dataclass
class GradCheckResult:
    name: str
    checked: int
    failures: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.checked > 0


def numerical_grad(f: Callable[[], float], inputs: Sequence[np.ndarray], eps: float) -> List[np.ndarray]:
    """Zentrale Differenzen von f() nach jedem Element der Eingabe-Arrays (werden temporär verändert)."""
    grads = []
    for x in inputs:
        if x.dtype.kind != "f":
            raise RuntimeError(f"numerical_grad needs float arrays, got {x.dtype}")
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        out = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = f()
            flat[i] = orig - eps
            minus = f()
            flat[i] = orig
            out[i] = (plus - minus) / (2.0 * eps)
        grads.append(g)
    return grads


def compare(name: str, analytic, numeric, rtol: float, atol: float = _ATOL) -> GradCheckResult:
    """Fehler gilt als Abweichung |a − fd| > rtol·|fd| + atol."""
    analytic = np.asarray(analytic, dtype=float).reshape(-1)
    numeric = np.asarray(numeric, dtype=float).reshape(-1)
    error = np.abs(analytic - numeric)
    failures = int(np.sum(error > rtol * np.abs(numeric) + atol))
    relative = error / np.maximum(np.abs(numeric), atol)
    result = GradCheckResult(name, analytic.size, failures, float(relative.max(initial=0.0)))
    logger.debug("gradcheck %s: %d/%d failures, max rel %.3g", name, failures, result.checked, result.max_error)
    return result


def kernel_suite(rng: np.random.Generator, n: int = 1000) -> List[GradCheckResult]:
    """Analytische d/ds, d/dk, d/dm, d²/ds² gegen zentrale Differenzen im Träger-Inneren."""
    m = rng.uniform(1.0, 4.0, n)
    k = rng.uniform(0.1, 2.0, n)
    s = rng.uniform(0.01, 0.5, n) * m * k
    h = KERNEL_STEP
    results = []
    for kind in (KernelKind.COMPACT, KernelKind.EXPONENTIAL):
        if kind is KernelKind.EXPONENTIAL:
            s_kind = rng.uniform(0.01, 3.0, n) * k
        else:
            s_kind = s
        ev = evaluate(kind, s_kind, k, m)

        def value(s_, k_, m_):
            return evaluate(kind, s_, k_, m_, derivatives=False).value

        fd_s = (value(s_kind + h, k, m) - value(s_kind - h, k, m)) / (2 * h)
        fd_k = (value(s_kind, k + h, m) - value(s_kind, k - h, m)) / (2 * h)
        fd_ss = (evaluate(kind, s_kind + h, k, m).d_s - evaluate(kind, s_kind - h, k, m).d_s) / (2 * h)
        results.append(compare(f"kernel[{kind.value}] d/ds", ev.d_s, fd_s, KERNEL_RTOL, 1e-8))
        results.append(compare(f"kernel[{kind.value}] d/dk", ev.d_k, fd_k, KERNEL_RTOL, 1e-8))
        results.append(compare(f"kernel[{kind.value}] d2/ds2", ev.d_ss, fd_ss, KERNEL_RTOL, 1e-6))
        if kind is KernelKind.COMPACT:
            fd_m = (value(s_kind, k, m + h) - value(s_kind, k, m - h)) / (2 * h)
            results.append(compare(f"kernel[{kind.value}] d/dm", ev.d_m, fd_m, KERNEL_RTOL, 1e-8))
    return results


def random_central_cloud(rng: np.random.Generator, n: int, feature_dim: int = 0) -> PointCloud:
    """Kleine Wolke um die Würfelmitte, deren Träger die Mitte großzügig überdecken."""
    positions = 0.5 + rng.uniform(-0.12, 0.12, size=(n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    m = rng.uniform(1.5, 3.0, n)
    k = rng.uniform(0.04, 0.06, n)
    features = rng.uniform(0.0, 1.0, size=(n, feature_dim))
    return PointCloud(positions, normals, k, m, features)


def _cloud_arrays(cloud: PointCloud) -> List[np.ndarray]:
    return [cloud.positions, cloud.normals, cloud.k, cloud.m, cloud.features]


_ATTRIBUTES = ("position", "normal", "k", "m", "feature")


def field_suite(rng: np.random.Generator, n_points: int = 8, n_queries: int = 4) -> List[GradCheckResult]:
    """eval_sdf_with_grads gegen Differenzen der Brute-Force-SDF."""
    results = []
    for kind in (KernelKind.COMPACT, KernelKind.EXPONENTIAL):
        cloud = random_central_cloud(rng, n_points)
        for q in 0.5 + rng.uniform(-0.05, 0.05, size=(n_queries, 3)):
            _, grads = eval_sdf_with_grads(q, cloud, kind=kind)
            numeric = numerical_grad(lambda: eval_sdf(q, cloud, kind), _cloud_arrays(cloud)[:4], PIPELINE_STEP)
            analytic = [grads.d_position, grads.d_normal, grads.d_k, grads.d_m]
            name = f"field[{kind.value}]"
            results.append(compare(name, np.concatenate([a.ravel() for a in analytic]),
                                   np.concatenate([g.ravel() for g in numeric]), PIPELINE_RTOL))
    return results


def well_covered_targets(grid, rng: np.random.Generator, n: int, threshold: float = 1e-3):
    """Ziele, deren 8 Zellecken alle deutlich abgedeckt sind (stabile Abdeckung unter Störungen)."""
    candidates = rng.uniform(TARGET_LOW, TARGET_HIGH, size=(20 * n, 3))
    ids, _ = trilinear_weights(grid.resolution, candidates)
    weight = grid.weight_sum.reshape(-1)
    keep = candidates[weight[ids].min(axis=1) >= threshold * weight.max()][:n]
    if len(keep) == 0:
        raise ValueError("no well-covered targets found")
    return keep, rng.normal(0.0, 0.05, size=len(keep))


def pipeline_suite(
    rng: np.random.Generator, n_points: int = 12, resolution: int = 16, kind: KernelKind = KernelKind.COMPACT
) -> List[GradCheckResult]:
    """Verlust → Knoten → Punktattribute, gegen Differenzen der kompletten Pipeline (alpha = 0)."""
    cloud = random_central_cloud(rng, n_points, feature_dim=3)
    cfg = ReconstructionConfig(resolution=resolution, loss_kind="sdf_l2", kernel_kind=kind,
                               filter=FilterConfig(alpha=0.0, lambda_lap=0.0))
    _, grid = build_grid(cloud, resolution, kind)
    targets = well_covered_targets(grid, rng, 40)
    noise = spawn_rng(0)

    def sdf_loss() -> float:
        _, g = build_grid(cloud, resolution, kind)
        return sdf_supervision_loss(g, cfg, targets, noise, alpha=0.0)[0]

    index, grid = build_grid(cloud, resolution, kind)
    _, vertex_grads = sdf_supervision_loss(grid, cfg, targets, noise, alpha=0.0)
    grads = splat_backward(cloud, index, grid, vertex_grads)
    numeric = numerical_grad(sdf_loss, _cloud_arrays(cloud)[:4], PIPELINE_STEP)
    analytic = [grads.d_position, grads.d_normal, grads.d_k, grads.d_m]
    results = [
        compare(f"pipeline[{kind.value}] sdf d/{name}", a, n, PIPELINE_RTOL)
        for name, a, n in zip(_ATTRIBUTES, analytic, numeric)
    ]

    # Texturpfad: linearer Verlust Σ G·C auf gut abgedeckten Knoten
    weight = grid.weight_sum
    coords = vertex_positions(resolution).reshape(weight.shape + (3,))
    inner = np.all((coords >= TARGET_LOW) & (coords <= TARGET_HIGH), axis=-1)
    mask = ((weight >= 1e-3 * weight.max()) & inner)[..., None]
    upstream = np.where(mask, rng.normal(size=weight.shape + (cloud.feature_dim,)), 0.0)

    def texture_loss() -> float:
        _, g = build_grid(cloud, resolution, kind)
        return float(np.sum(upstream * finalize_features(g)))

    zero = np.zeros(grid.n_vertices)
    tex = splat_backward(cloud, index, grid, zero, feature_grads=upstream)
    numeric = numerical_grad(texture_loss, _cloud_arrays(cloud), PIPELINE_STEP)
    analytic = [tex.d_position, tex.d_normal, tex.d_k, tex.d_m, tex.d_feature]
    results += [
        compare(f"pipeline[{kind.value}] texture d/{name}", a, n, PIPELINE_RTOL)
        for name, a, n in zip(_ATTRIBUTES, analytic, numeric)
    ]
    return results


def loss_suite(rng: np.random.Generator, resolution: int = 12) -> List[GradCheckResult]:
    """Knoten-Gradienten des gefilterten Verlusts (alpha > 0, feste Störungen) gegen Differenzen."""
    cloud = random_central_cloud(rng, 10)
    cfg = ReconstructionConfig(resolution=resolution, loss_kind="sdf_l2",
                               filter=FilterConfig(alpha=1e-3, lambda_lap=0.5, mc_samples=4))
    _, grid = build_grid(cloud, resolution)
    targets = well_covered_targets(grid, rng, 30)

    def loss() -> float:
        return sdf_supervision_loss(grid, cfg, targets, spawn_rng(11))[0]

    _, vertex_grads = sdf_supervision_loss(grid, cfg, targets, spawn_rng(11))
    covered = np.nonzero(grid.covered.reshape(-1))[0]
    chosen = rng.choice(covered, size=min(60, len(covered)), replace=False)
    sdf = grid.sdf.reshape(-1)
    numeric = []
    for v in chosen:
        orig = sdf[v]
        sdf[v] = orig + PIPELINE_STEP
        plus = loss()
        sdf[v] = orig - PIPELINE_STEP
        minus = loss()
        sdf[v] = orig
        numeric.append((plus - minus) / (2 * PIPELINE_STEP))
    return [compare("loss vertex grads", vertex_grads.reshape(-1)[chosen], numeric, 1e-4, 1e-9)]


def run_gradcheck(seed: int = 0, pipeline_configs: int = PIPELINE_CONFIGS) -> List[GradCheckResult]:
    """Alle Suiten mit gemeinsamem Seed.

    Die Pipeline-Prüfung läuft über ``pipeline_configs`` zufällige Wolken,
    abwechselnd mit kompaktem und exponentiellem Kern.
    """
    if pipeline_configs < 1:
        raise ValueError(f"pipeline_configs must be >= 1, got {pipeline_configs}")
    kinds = list(KernelKind)
    results = []
    results += kernel_suite(spawn_rng(seed, 0))
    results += field_suite(spawn_rng(seed, 1))
    results += loss_suite(spawn_rng(seed, 2))
    for i in range(pipeline_configs):
        kind = kinds[i % len(kinds)]
        results += pipeline_suite(spawn_rng(seed, 3, i), kind=kind)
        logger.debug("pipeline gradcheck %d/%d (%s) done", i + 1, pipeline_configs, kind.value)
    return results

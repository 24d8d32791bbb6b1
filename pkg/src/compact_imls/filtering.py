"""
Stochastische Vorkonditionierung des SDF-Feldes

Gauß-Weichzeichnung per Monte-Carlo-Störung der Abfragepositionen,
Reflexion an den Würfelrändern, Monte-Carlo-Laplace-Filter und der
Abkling-Plan für die Rauschstärke alpha.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .field import PointCloud, eval_sdf_batch
from .kernel import KernelKind
from .splat_grid import SplatGrid, default_background_sdf, sample_trilinear

logger = logging.getLogger(__name__)

FieldFn = Callable[[np.ndarray], np.ndarray]

DIMENSION = 3


@dataclass
class FilterConfig:
    """Parameter des Filters; alpha ist die Kovarianz-Skala (Standardabweichung sqrt(alpha))."""

    alpha: float = 0.0025
    lambda_lap: float = 0.8
    mc_samples: int = 1
    anneal_fraction: float = 1.0 / 3.0
    seed: int = 0
    dim_corrected: bool = True

    def validate(self) -> None:
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not np.isfinite(self.lambda_lap) or self.lambda_lap < 0:
            raise ValueError(f"lambda_lap must be >= 0, got {self.lambda_lap}")
        if int(self.mc_samples) != self.mc_samples or self.mc_samples < 1:
            raise ValueError(f"mc_samples must be a positive integer, got {self.mc_samples}")
        if not 0 < self.anneal_fraction <= 1:
            raise ValueError(f"anneal_fraction must lie in (0, 1], got {self.anneal_fraction}")


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Unabhängiger Zufallsstrom pro (seed, Schlüssel...), z.B. (seed, step) oder (seed, query)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def reflect(x):
    """Periode-2-Reflexion nach [0,1], komponentenweise."""
    m = np.mod(np.asarray(x, dtype=float), 2.0)
    return np.where(m <= 1.0, m, 2.0 - m)[()]


def _as_queries(q) -> Tuple[np.ndarray, bool]:
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    return q.reshape(-1, 3), single


def perturb(queries, cfg: FilterConfig, rng: np.random.Generator, alpha: Optional[float] = None):
    """Gestörte, reflektierte Abfragepunkte (Q,M,3) und die Störungen δ (Q,M,3)."""
    queries, _ = _as_queries(queries)
    alpha = cfg.alpha if alpha is None else alpha
    delta = rng.normal(0.0, np.sqrt(alpha), size=(len(queries), cfg.mc_samples, DIMENSION))
    return reflect(queries[:, None, :] + delta), delta


def sample_coefficients(delta: np.ndarray, cfg: FilterConfig, alpha: Optional[float] = None) -> np.ndarray:
    """Gewichte a_j mit f_final = Σ_j a_j·f(reflect(q + δ_j)), Form (Q,M).

    Die kombinierte Schätzung ist linear in den Feldwerten; dieselben
    Gewichte liefern den Gradienten nach den Feldwerten.
    """
    alpha = cfg.alpha if alpha is None else alpha
    m = delta.shape[1]
    blur = np.full(delta.shape[:2], 1.0 / m)
    if cfg.lambda_lap == 0 or alpha == 0:
        return blur
    return blur + cfg.lambda_lap * _laplacian_coefficients(delta, cfg, alpha)


def _laplacian_coefficients(delta: np.ndarray, cfg: FilterConfig, alpha: float) -> np.ndarray:
    m = delta.shape[1]
    sq_norm = np.einsum("qmj,qmj->qm", delta, delta)
    second = DIMENSION if cfg.dim_corrected else 1
    return (sq_norm / alpha**2 - second / alpha) / m


def _estimate(terms: np.ndarray, single: bool, return_stderr: bool):
    # terms: (Q,M), pro Sample bereits mit M multipliziert, damit mean = Schätzung
    value = terms.mean(axis=1)
    if single:
        value = value[0]
    if not return_stderr:
        return value
    m = terms.shape[1]
    stderr = terms.std(axis=1, ddof=1) / np.sqrt(m) if m > 1 else np.full(len(terms), np.inf)
    if single:
        stderr = stderr[0]
    return value, stderr


def _sampled_values(field: FieldFn, positions: np.ndarray) -> np.ndarray:
    q, m, _ = positions.shape
    return np.asarray(field(positions.reshape(-1, 3)), dtype=float).reshape(q, m)


def blur_estimate(field: FieldFn, q, cfg: FilterConfig, rng: np.random.Generator, return_stderr: bool = False):
    """Monte-Carlo-Gauß-Weichzeichnung (1/M)·Σ f(reflect(q + δ_j)); alpha = 0 wertet f(q) direkt aus."""
    queries, single = _as_queries(q)
    if cfg.alpha == 0:
        values = np.asarray(field(queries), dtype=float)
        exact = values[0] if single else values
        if return_stderr:
            return exact, np.zeros_like(exact)
        return exact
    positions, _ = perturb(queries, cfg, rng)
    return _estimate(_sampled_values(field, positions), single, return_stderr)


def laplacian_estimate(
    field: FieldFn, q, cfg: FilterConfig, rng: np.random.Generator, return_stderr: bool = False
):
    """Monte-Carlo-Laplace: σ⁻⁴·mean(‖δ‖²f) − d·σ⁻²·mean(f) (d = 1 ohne Dimensionskorrektur)."""
    if cfg.alpha <= 0:
        raise ValueError("laplacian_estimate requires alpha > 0")
    queries, single = _as_queries(q)
    positions, delta = perturb(queries, cfg, rng)
    values = _sampled_values(field, positions)
    terms = values * _laplacian_coefficients(delta, cfg, cfg.alpha) * cfg.mc_samples
    return _estimate(terms, single, return_stderr)


def filtered_field(field: FieldFn, q, cfg: FilterConfig, rng: np.random.Generator, return_stderr: bool = False):
    """Weichzeichnung + λ·Laplace mit gemeinsamen Samples; alpha = 0 liefert f(q) bitgenau."""
    queries, single = _as_queries(q)
    if cfg.alpha == 0:
        return blur_estimate(field, q, cfg, rng, return_stderr)
    positions, delta = perturb(queries, cfg, rng)
    values = _sampled_values(field, positions)
    terms = values * sample_coefficients(delta, cfg) * cfg.mc_samples
    return _estimate(terms, single, return_stderr)


def anneal_alpha(step: int, total_steps: int, alpha0: float, cfg: FilterConfig) -> float:
    """alpha0·exp(−5·t/T_a) für t < T_a = anneal_fraction·total_steps, danach exakt 0."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step must lie in [0, {total_steps}], got {step}")
    cutoff = cfg.anneal_fraction * total_steps
    if step >= cutoff:
        return 0.0
    return float(alpha0 * np.exp(-5.0 * step / cutoff))


def grid_field(grid: SplatGrid) -> FieldFn:
    """Schneller Pfad: trilineare Interpolation der finalisierten Gitter-SDF."""
    if not grid.finalized:
        raise ValueError("grid must be finalized")

    def _field(queries: np.ndarray) -> np.ndarray:
        return sample_trilinear(grid.sdf, queries)[0]

    return _field


def oracle_field(
    cloud: PointCloud, kind: KernelKind = KernelKind.COMPACT, background_sdf: Optional[float] = None
) -> FieldFn:
    """Referenzpfad: direkte Auswertung des Punktfeldes, unbedeckte Punkte erhalten die Hintergrund-SDF."""
    if background_sdf is None:
        background_sdf = default_background_sdf(64)

    def _field(queries: np.ndarray) -> np.ndarray:
        values, covered = eval_sdf_batch(queries, cloud, kind)
        return np.where(covered, values, background_sdf)

    return _field

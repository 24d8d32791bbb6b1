"""
Rekonstruktions-Schleife: Punktattribute per Gradientenabstieg an SDF-Stichproben anpassen

Pipeline pro Schritt: Binning → Splatting → Finalisierung → gefilterter
Verlust → Rückpropagation auf die Punkte → Adam-Update → Klemmen.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from tqdm import tqdm

from .field import AttributeGradients, PointCloud
from .filtering import FilterConfig, anneal_alpha, perturb, sample_coefficients, spawn_rng
from .isosurface import Mesh, interpolate_vertex_attributes, marching_cubes
from .kernel import K_MIN, M_MAX, M_MIN, KernelKind
from .splat_grid import SplatGrid, build_grid, splat_backward, trilinear_weights

logger = logging.getLogger(__name__)

ShapeOracle = Callable[[np.ndarray], np.ndarray]
Targets = Tuple[np.ndarray, np.ndarray]

LOSS_KINDS = ("sdf_l1", "sdf_l2")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Stichproben: Band von 3 Voxeln um die Fläche, 10 % gleichverteilt
BAND_VOXELS = 3.0
UNIFORM_FRACTION = 0.1
_MAX_REJECTION_ROUNDS = 200

NORMAL_TOLERANCE = 1e-6


class DegenerateSupervisionError(ValueError):
    """Keine einzige Stichprobe liegt im abgedeckten Bereich des Gitters."""


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


class ConstraintViolationError(AssertionError):
    pass


@dataclass
class ReconstructionConfig:
    resolution: int = 64
    steps: int = 300
    lr_position: float = 1e-3
    lr_normal: float = 1e-3
    lr_k: float = 1e-4
    lr_m: float = 1e-3
    lr_feature: float = 1e-2
    filter: FilterConfig = field(default_factory=FilterConfig)
    supervision_samples: int = 4096
    loss_kind: str = "sdf_l1"
    kernel_kind: KernelKind = KernelKind.COMPACT
    background_sdf: Optional[float] = None
    workers: int = 1
    debug: bool = False

    @property
    def seed(self) -> int:
        return self.filter.seed

    @property
    def learning_rates(self) -> Dict[str, float]:
        return {
            "position": self.lr_position,
            "normal": self.lr_normal,
            "k": self.lr_k,
            "m": self.lr_m,
            "feature": self.lr_feature,
        }

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.resolution < 8:
            raise ValueError(f"resolution must be >= 8, got {self.resolution}")
        for name, lr in self.learning_rates.items():
            if not np.isfinite(lr) or lr < 0:
                raise ValueError(f"learning rate for {name} must be >= 0, got {lr}")
        if self.supervision_samples < 1:
            raise ValueError(f"supervision_samples must be >= 1, got {self.supervision_samples}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        self.kernel_kind = KernelKind(self.kernel_kind)
        if self.background_sdf is not None and self.background_sdf <= 0:
            raise ValueError(f"background_sdf must be positive, got {self.background_sdf}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        self.filter.validate()


@dataclass
class TrainState:
    """Zustand der Optimierung; Adam-Momente pro Attributgruppe"""

    cloud: PointCloud
    step: int = 0
    alpha_current: float = 0.0
    loss_history: List[float] = field(default_factory=list)
    alpha_history: List[float] = field(default_factory=list)
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def start(cls, cloud: PointCloud, cfg: ReconstructionConfig) -> "TrainState":
        state = cls(cloud=cloud)
        state.alpha_current = anneal_alpha(0, cfg.steps, cfg.filter.alpha, cfg.filter)
        for name, param in _parameters(cloud).items():
            state.first_moments[name] = np.zeros_like(param)
            state.second_moments[name] = np.zeros_like(param)
        return state


def _parameters(cloud: PointCloud) -> Dict[str, np.ndarray]:
    return {
        "position": cloud.positions,
        "normal": cloud.normals,
        "k": cloud.k,
        "m": cloud.m,
        "feature": cloud.features,
    }


def _gradients(grads: AttributeGradients) -> Dict[str, np.ndarray]:
    return {
        "position": grads.d_position,
        "normal": grads.d_normal,
        "k": grads.d_k,
        "m": grads.d_m,
        "feature": grads.d_feature,
    }


def sdf_supervision_loss(
    grid: SplatGrid,
    cfg: ReconstructionConfig,
    targets: Targets,
    rng: np.random.Generator,
    alpha: Optional[float] = None,
) -> Tuple[float, np.ndarray]:
    """Gefilterter SDF-Regressionsverlust (L1 oder L2) und sein Gradient nach allen Knotenwerten.

    Das gefilterte Feld wird über trilineare Interpolation an den gestörten
    Positionen geschätzt; die Schätzung ist linear in den Knotenwerten, der
    Gradient folgt also direkt aus Filter- und Interpolationsgewichten.
    Gezählt werden nur abgedeckte Ziele (mindestens eine Zellecke abgedeckt).

    Returns:
        (Verlust, Knoten-Gradienten der Form (R,R,R))
    """
    if not grid.finalized:
        raise ValueError("grid must be finalized before computing the loss")
    queries = np.asarray(targets[0], dtype=float).reshape(-1, 3)
    truth = np.asarray(targets[1], dtype=float).reshape(-1)
    if len(queries) == 0 or len(queries) != len(truth):
        raise ValueError("targets must be a nonempty list of (query, sdf) pairs")

    r = grid.resolution
    covered = grid.covered.reshape(-1)
    cell_ids, _ = trilinear_weights(r, queries)
    active = np.any(covered[cell_ids], axis=1)
    if not np.any(active):
        raise DegenerateSupervisionError("all supervision targets lie outside the covered region")
    queries, truth = queries[active], truth[active]

    alpha = cfg.filter.alpha if alpha is None else alpha
    if alpha == 0:
        positions = queries[:, None, :]
        coefficients = np.ones((len(queries), 1))
    else:
        positions, delta = perturb(queries, cfg.filter, rng, alpha=alpha)
        coefficients = sample_coefficients(delta, cfg.filter, alpha=alpha)

    n_targets, n_samples, _ = positions.shape
    ids, weights = trilinear_weights(r, positions.reshape(-1, 3))
    sampled = np.einsum("pc,pc->p", weights, grid.sdf.reshape(-1)[ids]).reshape(n_targets, n_samples)
    prediction = np.einsum("qm,qm->q", coefficients, sampled)
    residual = prediction - truth

    if cfg.loss_kind == "sdf_l2":
        loss = float(np.mean(residual**2))
        d_prediction = 2.0 * residual / n_targets
    else:
        loss = float(np.mean(np.abs(residual)))
        d_prediction = np.sign(residual) / n_targets

    d_sample = (d_prediction[:, None] * coefficients).reshape(-1)
    vertex_grads = np.bincount(
        ids.reshape(-1), weights=(d_sample[:, None] * weights).reshape(-1), minlength=r**3
    )
    vertex_grads[~covered] = 0.0
    return loss, vertex_grads.reshape(r, r, r)


def _adam_update(state: TrainState, cfg: ReconstructionConfig, grads: AttributeGradients) -> None:
    t = state.step + 1
    params = _parameters(state.cloud)
    for name, grad in _gradients(grads).items():
        lr = cfg.learning_rates[name]
        if lr == 0:
            continue
        m1 = state.first_moments[name]
        m2 = state.second_moments[name]
        m1 *= ADAM_BETA1
        m1 += (1.0 - ADAM_BETA1) * grad
        m2 *= ADAM_BETA2
        m2 += (1.0 - ADAM_BETA2) * grad**2
        m_hat = m1 / (1.0 - ADAM_BETA1**t)
        v_hat = m2 / (1.0 - ADAM_BETA2**t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def restore_constraints(cloud: PointCloud, cfg: ReconstructionConfig) -> None:
    """Normalen normieren, k und m klemmen, Positionen in [0,1]³ (nur für trainierte Gruppen)."""
    if cfg.lr_normal > 0:
        norms = np.linalg.norm(cloud.normals, axis=1)
        ok = norms > 0
        cloud.normals[ok] /= norms[ok, None]
    if cfg.lr_k > 0:
        np.maximum(cloud.k, K_MIN, out=cloud.k)
    if cfg.lr_m > 0:
        np.clip(cloud.m, M_MIN, M_MAX, out=cloud.m)
    if cfg.lr_position > 0:
        np.clip(cloud.positions, 0.0, 1.0, out=cloud.positions)


def check_invariants(state: TrainState, cfg: ReconstructionConfig) -> None:
    cloud = state.cloud
    norms = np.linalg.norm(cloud.normals, axis=1)
    if np.any(np.abs(norms - 1.0) > NORMAL_TOLERANCE):
        raise ConstraintViolationError(f"non-unit normal after step {state.step}")
    if np.any(cloud.k < K_MIN):
        raise ConstraintViolationError(f"k below {K_MIN} after step {state.step}")
    if np.any(cloud.m < M_MIN) or np.any(cloud.m > M_MAX):
        raise ConstraintViolationError(f"m outside [{M_MIN}, {M_MAX}] after step {state.step}")
    if np.any(cloud.positions < 0) or np.any(cloud.positions > 1):
        raise ConstraintViolationError(f"position outside the unit cube after step {state.step}")
    expected = anneal_alpha(min(state.step, cfg.steps), cfg.steps, cfg.filter.alpha, cfg.filter)
    if state.alpha_current != expected:
        raise ConstraintViolationError(
            f"alpha {state.alpha_current} does not follow the schedule ({expected}) at step {state.step}"
        )


def step(state: TrainState, cfg: ReconstructionConfig, targets: Targets, rng: np.random.Generator) -> TrainState:
    """Eine vollständige Iteration; der Zustand wird an Ort und Stelle fortgeschrieben."""
    cloud = state.cloud
    index, grid = build_grid(cloud, cfg.resolution, cfg.kernel_kind, cfg.background_sdf, cfg.workers)
    loss, vertex_grads = sdf_supervision_loss(grid, cfg, targets, rng, alpha=state.alpha_current)
    if not np.isfinite(loss):
        raise NonFiniteLossError(state.step, loss)

    grads = splat_backward(cloud, index, grid, vertex_grads)
    _adam_update(state, cfg, grads)
    restore_constraints(cloud, cfg)

    state.loss_history.append(loss)
    state.alpha_history.append(state.alpha_current)
    state.step += 1
    state.alpha_current = anneal_alpha(min(state.step, cfg.steps), cfg.steps, cfg.filter.alpha, cfg.filter)
    logger.debug("step %d: loss=%.6g alpha=%.3g", state.step, loss, state.alpha_history[-1])
    if cfg.debug:
        check_invariants(state, cfg)
    return state


def sample_supervision(
    oracle: ShapeOracle, n: int, resolution: int, rng: np.random.Generator
) -> Targets:
    """Stichproben im Band von 3 Voxeln um die Fläche (Rejection Sampling) plus 10 % gleichverteilt."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    n_uniform = int(round(UNIFORM_FRACTION * n))
    n_band = n - n_uniform
    band = BAND_VOXELS / (resolution - 1)

    accepted: List[np.ndarray] = []
    found = 0
    for _ in range(_MAX_REJECTION_ROUNDS):
        if found >= n_band:
            break
        candidates = rng.uniform(0.0, 1.0, size=(max(4 * (n_band - found), 256), 3))
        near = candidates[np.abs(oracle(candidates)) <= band]
        accepted.append(near)
        found += len(near)
    else:
        if found < n_band:
            logger.warning("sample_supervision: only %d of %d band samples found", found, n_band)

    queries = np.concatenate(accepted + [np.zeros((0, 3))])[:n_band]
    missing = n - len(queries)
    queries = np.concatenate((queries, rng.uniform(0.0, 1.0, size=(missing, 3))))
    return queries, np.asarray(oracle(queries), dtype=float)


def nearest_plane_oracle(cloud: PointCloud) -> ShapeOracle:
    """Signierter Abstand zur Tangentialebene des nächsten Eingabepunktes."""
    if len(cloud) == 0:
        raise ValueError("nearest_plane_oracle needs a nonempty point cloud")
    tree = cKDTree(cloud.positions)
    positions = cloud.positions.copy()
    normals = cloud.normals.copy()

    def _oracle(queries: np.ndarray) -> np.ndarray:
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        _, nearest = tree.query(queries)
        return np.einsum("ij,ij->i", queries - positions[nearest], normals[nearest])

    return _oracle


def extract_mesh(
    cloud: PointCloud,
    resolution: int,
    kind: KernelKind = KernelKind.COMPACT,
    background_sdf: Optional[float] = None,
    workers: int = 1,
) -> Tuple[SplatGrid, Mesh]:
    """Splatten ohne Störung und Marching Cubes; Features werden bei D > 0 interpoliert."""
    _, grid = build_grid(cloud, resolution, kind, background_sdf, workers)
    mesh = marching_cubes(grid)
    if cloud.feature_dim:
        mesh = interpolate_vertex_attributes(mesh, grid)
    return grid, mesh


def run(
    initial: PointCloud,
    shape_oracle: ShapeOracle,
    cfg: ReconstructionConfig,
    steps: Optional[int] = None,
    progress: bool = False,
) -> Tuple[TrainState, Mesh]:
    """Optimiert alle Punktattribute gegen das Orakel und extrahiert das Endnetz.

    Jeder Schritt zieht frische Stichproben; Stichproben und Filterrauschen
    kommen aus getrennten Strömen (seed, Schritt, 0/1).

    Args:
        steps: überschreibt cfg.steps (0 ist erlaubt: nur Splatten und Extrahieren)
        progress: tqdm-Fortschrittsbalken auf stderr
    """
    cfg.validate()
    if len(initial) == 0:
        raise ValueError("fit needs a nonempty initial point cloud")
    total = cfg.steps if steps is None else steps
    if total < 0:
        raise ValueError(f"steps must be >= 0, got {total}")

    state = TrainState.start(initial.copy(), cfg)
    for t in tqdm(range(total), desc="fit", disable=not progress, leave=False):
        targets = sample_supervision(
            shape_oracle, cfg.supervision_samples, cfg.resolution, spawn_rng(cfg.seed, t, 0)
        )
        step(state, cfg, targets, spawn_rng(cfg.seed, t, 1))

    _, mesh = extract_mesh(state.cloud, cfg.resolution, cfg.kernel_kind, cfg.background_sdf, cfg.workers)
    logger.info("fit finished after %d steps: %d vertices", total, mesh.n_vertices)
    return state, mesh


def fit(
    initial: PointCloud,
    shape_oracle: ShapeOracle,
    cfg: ReconstructionConfig,
    steps: Optional[int] = None,
    progress: bool = False,
) -> Tuple[PointCloud, Mesh, List[float]]:
    """Returns (optimierte Wolke, Netz, Verlustverlauf)."""
    state, mesh = run(initial, shape_oracle, cfg, steps=steps, progress=progress)
    return state.cloud, mesh, state.loss_history

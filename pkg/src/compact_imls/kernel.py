"""
Kernel-Funktionen für die IMLS-Gewichtung

Enthält den kompakten Polynomkern, den exponentiellen Vergleichskern und alle
analytischen Ableitungen. Alle Funktionen arbeiten auf quadrierten Abständen
und akzeptieren Skalare oder numpy-Arrays (elementweise).
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

# Klemmgrenzen während der Optimierung
K_MIN = 1e-6
M_MIN = 1.0
M_MAX = 32.0

# Basis unterhalb dieser Schwelle gilt als 0 (Potenz in exp-log-Form)
_POW_FLOOR = 1e-300

# Abschneideradius des Exponentialkerns in Vielfachen von r
EXP_TRUNCATION = 3.0


class KernelKind(str, Enum):
    """Auswahl des Gewichtungskerns"""

    COMPACT = "compact"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class KernelParams:
    """Formparameter eines Punktes.

    k: räumliche Ausdehnung (Einheit: quadrierter Abstand), k > 0
    m: Schärfe des Abfalls, m >= 1

    Beim Exponentialkern steht im k-Slot r² (siehe ``radius``).
    Felder dürfen auch Arrays sein, dann gilt die Prüfung elementweise.
    """

    k: float
    m: float = 2.0

    def __post_init__(self):
        check_params(self.k, self.m)

    @property
    def support_radius_sq(self):
        return support_radius_sq(self)

    @property
    def radius(self):
        """Einflussradius r des Exponentialkerns (r² liegt im k-Slot)"""
        return np.sqrt(self.k)


class KernelEval(NamedTuple):
    """Kernwert und Ableitungen an denselben Stellen"""

    value: np.ndarray
    d_s: np.ndarray
    d_k: np.ndarray
    d_m: np.ndarray
    d_ss: np.ndarray


def check_params(k, m) -> None:
    """Prüft k > 0 und m >= 1, sonst ValueError."""
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(~np.isfinite(k)) or np.any(k <= 0):
        raise ValueError(f"kernel parameter k must be positive, got {k}")
    if np.any(~np.isfinite(m)) or np.any(m < 1):
        raise ValueError(f"kernel parameter m must be >= 1, got {m}")


def _pow(base, exponent):
    # exp(e * log(b)), 0 sobald die Basis unterläuft
    base = np.asarray(base, dtype=float)
    safe = np.maximum(base, _POW_FLOOR)
    return np.where(base > _POW_FLOOR, np.exp(exponent * np.log(safe)), 0.0)


def _compact_terms(s, k, m):
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    inside = s < m * k
    u = np.where(inside, 1.0 - s / (m * k), 0.0)
    g = 2.0 * s / k + 1.0
    return s, k, m, inside, u, g


def support_radius_sq(params: KernelParams) -> float:
    """Quadrierte Trägergrenze m·k des kompakten Kerns."""
    return params.m * params.k


def eval_compact(s, params: KernelParams):
    """Kompakter Polynomkern (1 - s/(mk))^(2m) · (2s/k + 1), exakt 0 für s >= m·k."""
    s, k, m, inside, u, g = _compact_terms(s, params.k, params.m)
    return np.where(inside, _pow(u, 2.0 * m) * g, 0.0)[()]


def grad_s(s, params: KernelParams):
    """dγ/ds = (2/k)·[u^(2m) - u^(2m-1)·(2s/k + 1)]"""
    s, k, m, inside, u, g = _compact_terms(s, params.k, params.m)
    value = (2.0 / k) * (_pow(u, 2.0 * m) - _pow(u, 2.0 * m - 1.0) * g)
    return np.where(inside, value, 0.0)[()]


def grad_k(s, params: KernelParams):
    """dγ/dk = (2s/k²)·[u^(2m-1)·(2s/k + 1) - u^(2m)]"""
    s, k, m, inside, u, g = _compact_terms(s, params.k, params.m)
    value = (2.0 * s / k**2) * (_pow(u, 2.0 * m - 1.0) * g - _pow(u, 2.0 * m))
    return np.where(inside, value, 0.0)[()]


def grad_m(s, params: KernelParams):
    """dγ/dm = γ·2·[ln u + s/(k·m·u)]; am Rand s = m·k per Konvention 0."""
    s, k, m, inside, u, g = _compact_terms(s, params.k, params.m)
    safe_u = np.where(inside, u, 1.0)
    gamma = _pow(u, 2.0 * m) * g
    value = gamma * 2.0 * (np.log(safe_u) + s / (k * m * safe_u))
    return np.where(inside & (gamma > 0), value, 0.0)[()]


def grad_ss(s, params: KernelParams):
    """Zweite Ableitung d²γ/ds², benötigt für den analytischen Laplace-Operator."""
    s, k, m, inside, u, g = _compact_terms(s, params.k, params.m)
    value = (2.0 * (2.0 * m - 1.0) / (m * k**2)) * _pow(u, 2.0 * m - 2.0) * g - (
        8.0 / k**2
    ) * _pow(u, 2.0 * m - 1.0)
    return np.where(inside, value, 0.0)[()]


def eval_exponential(sq_dist, r):
    """Exponentieller Kern exp(-d²/r²) mit unendlichem Träger."""
    r = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r <= 0):
        raise ValueError(f"influence radius r must be positive, got {r}")
    return np.exp(-np.asarray(sq_dist, dtype=float) / r**2)[()]


def matched_exponential_k(k, m):
    """r² so gewählt, dass 3·r der kompakten Trägergrenze sqrt(m·k) entspricht."""
    return np.asarray(m, dtype=float) * np.asarray(k, dtype=float) / EXP_TRUNCATION**2


def support_sq(kind: KernelKind, k, m):
    """Quadrierte Trägergrenze je Kernart (Exponentialkern: abgeschnitten bei 3·r)."""
    k = np.asarray(k, dtype=float)
    if KernelKind(kind) is KernelKind.EXPONENTIAL:
        return EXP_TRUNCATION**2 * k
    return np.asarray(m, dtype=float) * k


def evaluate(kind: KernelKind, s, k, m, derivatives: bool = True) -> KernelEval:
    """Gemeinsamer Einstieg für Splatting und Orakel.

    Liefert Wert und (optional) Ableitungen nach s, k, m sowie d²/ds².
    Außerhalb des Trägers sind alle Einträge exakt 0.
    """
    kind = KernelKind(kind)
    s = np.asarray(s, dtype=float)
    k = np.asarray(k, dtype=float)

    if kind is KernelKind.EXPONENTIAL:
        inside = s < EXP_TRUNCATION**2 * k
        value = np.where(inside, np.exp(-s / k), 0.0)
        if not derivatives:
            zeros = np.zeros_like(value)
            return KernelEval(value, zeros, zeros, zeros, zeros)
        return KernelEval(
            value, -value / k, value * s / k**2, np.zeros_like(value), value / k**2
        )

    s, k, m, inside, u, g = _compact_terms(s, k, m)
    u_2m1 = _pow(u, 2.0 * m - 1.0)
    u_2m = u_2m1 * u
    value = np.where(inside, u_2m * g, 0.0)
    if not derivatives:
        zeros = np.zeros_like(value)
        return KernelEval(value, zeros, zeros, zeros, zeros)

    d_s = np.where(inside, (2.0 / k) * (u_2m - u_2m1 * g), 0.0)
    d_k = np.where(inside, (2.0 * s / k**2) * (u_2m1 * g - u_2m), 0.0)
    safe_u = np.where(inside, u, 1.0)
    d_m = np.where(
        inside & (value > 0),
        value * 2.0 * (np.log(safe_u) + s / (k * m * safe_u)),
        0.0,
    )
    d_ss = np.where(
        inside,
        (2.0 * (2.0 * m - 1.0) / (m * k**2)) * _pow(u, 2.0 * m - 2.0) * g
        - (8.0 / k**2) * u_2m1,
        0.0,
    )
    return KernelEval(value, d_s, d_k, d_m, d_ss)

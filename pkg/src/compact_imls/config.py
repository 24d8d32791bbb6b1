"""
Konfiguration: key=value-Dateien und Zusammenführung mit CLI-Flags

Rangfolge: Standardwerte < Konfigurationsdatei < Flags.
"""

import logging
from dataclasses import replace
from typing import Any, Callable, Dict, Mapping, Optional

from .filtering import FilterConfig
from .kernel import KernelKind
from .optimize import LOSS_KINDS, ReconstructionConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> Optional[float]:
    return None if str(text).strip().lower() in ("", "none", "auto") else float(text)


def _loss_kind(text: str) -> str:
    if text not in LOSS_KINDS:
        raise ValueError(f"expected one of {LOSS_KINDS}")
    return text


# Schlüssel → (Ziel, Feldname, Konverter); Ziel "filter" meint ReconstructionConfig.filter
CONFIG_KEYS: Dict[str, tuple] = {
    "resolution": ("run", "resolution", int),
    "steps": ("run", "steps", int),
    "lr_position": ("run", "lr_position", float),
    "lr_normal": ("run", "lr_normal", float),
    "lr_k": ("run", "lr_k", float),
    "lr_m": ("run", "lr_m", float),
    "lr_feature": ("run", "lr_feature", float),
    "supervision_samples": ("run", "supervision_samples", int),
    "loss_kind": ("run", "loss_kind", _loss_kind),
    "kernel_kind": ("run", "kernel_kind", KernelKind),
    "background_sdf": ("run", "background_sdf", _optional_float),
    "workers": ("run", "workers", int),
    "debug": ("run", "debug", _bool),
    "alpha0": ("filter", "alpha", float),
    "lambda_lap": ("filter", "lambda_lap", float),
    "mc_samples": ("filter", "mc_samples", int),
    "anneal_fraction": ("filter", "anneal_fraction", float),
    "seed": ("filter", "seed", int),
    "dim_corrected": ("filter", "dim_corrected", _bool),
}


def convert_value(key: str, value: Any) -> Any:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key: {key}", key=key)
    convert: Callable = CONFIG_KEYS[key][2]
    if not isinstance(value, str):
        return value
    try:
        return convert(value.strip())
    except ValueError as e:
        raise ConfigError(f"invalid value for {key}: {value!r} ({e})", key=key) from e


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Zeilen "key = value"; Kommentare mit #, Leerzeilen werden ignoriert."""
    values: Dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = convert_value(key, value)
    return values


def read_config_file(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), source=path)


def build_config(
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    base: Optional[ReconstructionConfig] = None,
) -> ReconstructionConfig:
    """Legt Dateiwerte und danach Flags über die Standardwerte; None in overrides heißt "nicht gesetzt"."""
    cfg = replace(base) if base is not None else ReconstructionConfig()
    cfg.filter = replace(cfg.filter) if base is not None else FilterConfig()
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if value is None:
                continue
            target, name, _ = CONFIG_KEYS.get(key, (None, None, None))
            if target is None:
                raise ConfigError(f"unknown config key: {key}", key=key)
            value = convert_value(key, value)
            setattr(cfg.filter if target == "filter" else cfg, name, value)
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def config_to_dict(cfg: ReconstructionConfig) -> Dict[str, Any]:
    """Flache Darstellung mit denselben Schlüsseln wie die Konfigurationsdatei."""
    result = {}
    for key, (target, name, _) in CONFIG_KEYS.items():
        value = getattr(cfg.filter if target == "filter" else cfg, name)
        result[key] = value.value if isinstance(value, KernelKind) else value
    return result

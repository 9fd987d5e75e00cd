#!/usr/bin/env python3
"""
Tracker configuration
Flat key = value settings with per-key range checks
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Dict, Mapping, Tuple

from core import TrackingError

logger = logging.getLogger(__name__)

# Valid (min, max) ranges, inclusive
PARAMETER_LIMITS: Dict[str, Tuple[float, float]] = {
    'period': (1e-5, 1.0),
    'eros_kernel': (1, 99),
    'eros_lambda': (1e-6, 1.0 - 1e-6),
    'flow_cell_size': (3, 512),
    'flow_window': (1e-5, 10.0),
    'flow_tau': (0.0, 1.0),
    'flow_min_events': (3, 10000),
    'flow_max_events': (3, 256),
    'flow_max_triplets': (1, 100000),
    'flow_collinearity_px': (0.0, 100.0),
    'kf_rho': (0.0, 1.0),
    'kf_q_v': (0.0, 100.0),
    'kf_q_w': (0.0, 100.0),
    'kf_r_px': (1e-6, 1000.0),
    'kf_gate': (0.0, 1e9),
    'kf_init_v_std': (1e-9, 1000.0),
    'kf_init_w_std': (1e-9, 1000.0),
    'depth_search_radius': (0, 50),
    'dog_sigma1': (0.1, 50.0),
    'dog_sigma2': (0.1, 50.0),
    'roi_dilation': (0.0, 5.0),
    'crease_angle_deg': (0.0, 180.0),
    'depth_jump': (0.0, 100.0),
    'perturb_px': (1e-3, 100.0),
    'perturb_deg': (1e-4, 45.0),
    'correction_iterations': (1, 1000),
    'ukf_alpha': (1e-6, 1.0),
    'ukf_beta': (0.0, 100.0),
    'ukf_kappa': (-5.0, 100.0),
    'ukf_q_pos': (0.0, 10.0),
    'ukf_q_rot_deg': (0.0, 180.0),
    'ukf_r_pos': (1e-9, 10.0),
    'ukf_r_rot_deg': (1e-9, 180.0),
    'ukf_init_pos_std': (1e-9, 10.0),
    'ukf_init_rot_deg': (1e-9, 180.0),
    'ukf_gate': (0.0, 1e9),
    'ukf_max_rejections': (1, 1000),
}

TRACKER_MODES = ('full', 'velocity_only', 'correction_only', 'pose_difference')
UKF_PROCESS_MODELS = ('twist', 'random_walk')


class ConfigError(TrackingError, ValueError):
    """Raised for unknown keys, unparsable values or values out of range"""


@dataclass(frozen=True)
class TrackerConfig:
    """Every tunable of the pipeline with its default"""
    period: float = 0.002
    # EROS
    eros_kernel: int = 7
    eros_lambda: float = 0.7
    # event optical flow
    flow_cell_size: int = 20
    flow_window: float = 0.030
    flow_tau: float = 0.001
    flow_min_events: int = 6
    flow_max_events: int = 64
    flow_max_triplets: int = 256
    flow_collinearity_px: float = 1.0
    # twist filter (noise values are standard deviations)
    kf_rho: float = 0.5
    kf_q_v: float = 0.1
    kf_q_w: float = 0.5
    kf_r_px: float = 0.5
    kf_gating: bool = True
    kf_gate: float = 9.0
    kf_init_v_std: float = 1.0
    kf_init_w_std: float = 3.0
    depth_search_radius: int = 2
    # templates
    dog_sigma1: float = 1.0
    dog_sigma2: float = 2.5
    roi_dilation: float = 0.2
    crease_angle_deg: float = 30.0
    depth_jump: float = 0.01
    # corrector
    perturb_px: float = 1.0
    perturb_deg: float = 0.5
    correction_iterations: int = 1
    # pose smoothing
    ukf_enabled: bool = True
    ukf_process_model: str = 'twist'
    ukf_alpha: float = 1e-3
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    ukf_q_pos: float = 0.0005
    ukf_q_rot_deg: float = 0.2
    ukf_r_pos: float = 0.001
    ukf_r_rot_deg: float = 0.5
    ukf_init_pos_std: float = 0.005
    ukf_init_rot_deg: float = 2.0
    ukf_gate: float = 22.46
    ukf_max_rejections: int = 3
    tracker_mode: str = 'full'

    def __post_init__(self):
        self.validate()

    def validate(self):
        """
        Check every value against PARAMETER_LIMITS and the enumerations

        Raises:
            ConfigError: on the first invalid value
        """
        for f in fields(self):
            _check_value(f.name, getattr(self, f.name))
        if self.dog_sigma1 >= self.dog_sigma2:
            raise ConfigError("'dog_sigma1' must be smaller than 'dog_sigma2'")
        if self.flow_min_events > self.flow_max_events:
            raise ConfigError("'flow_min_events' exceeds 'flow_max_events'")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "TrackerConfig":
        """Build a config from raw string values, converting each to its field type"""
        types = {f.name: f.type for f in fields(cls)}
        converted = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown configuration key '{key}'")
            converted[key] = _convert(key, raw, types[key])
        return cls(**converted)

    @classmethod
    def from_file(cls, path: str) -> "TrackerConfig":
        """
        Load a `key = value` file; every error names the offending file line

        Raises:
            ConfigError: prefixed with path:line
        """
        entries = parse_key_lines(path)
        types = {f.name: f.type for f in fields(cls)}
        converted = {}
        for key, (raw, number) in entries.items():
            try:
                if key not in types:
                    raise ConfigError(f"unknown configuration key '{key}'")
                converted[key] = _convert(key, raw, types[key])
                _check_value(key, converted[key])
            except ConfigError as e:
                raise ConfigError(f"{path}:{number}: {e}") from None
        try:
            config = cls(**converted)
        except ConfigError as e:
            # cross-key rules name the later of the lines involved
            lines = [number for key, (_, number) in entries.items() if f"'{key}'" in str(e)]
            where = f"{path}:{max(lines)}" if lines else path
            raise ConfigError(f"{where}: {e}") from None
        logger.info(f"Loaded {len(entries)} configuration values from {path}")
        return config

    def with_overrides(self, **overrides) -> "TrackerConfig":
        return replace(self, **overrides)

    def to_lines(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def parse_key_values(path: str) -> Dict[str, str]:
    """Raw string values of a flat `key = value` file"""
    return {key: raw for key, (raw, _) in parse_key_lines(path).items()}


def parse_key_lines(path: str) -> Dict[str, Tuple[str, int]]:
    """
    Read a flat `key = value` file

    Args:
        path: File path

    Returns:
        dict of (raw string value, 1-based line number)

    Raises:
        ConfigError: on malformed or duplicate lines
    """
    values: Dict[str, Tuple[str, int]] = {}
    with open(path, 'r') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.split('#', 1)[0].strip()
            if not text:
                continue
            if '=' not in text:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {line.strip()!r}")
            key, raw = (part.strip() for part in text.split('=', 1))
            if not key or not raw:
                raise ConfigError(f"{path}:{number}: empty key or value")
            if key in values:
                raise ConfigError(f"{path}:{number}: duplicate key '{key}'")
            values[key] = (raw, number)
    return values


def _check_value(key: str, value):
    """Single-key rules: numeric ranges, odd EROS kernel and the enumerations"""
    if key in PARAMETER_LIMITS:
        low, high = PARAMETER_LIMITS[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"'{key}' must be a finite number, got {value!r}")
        if value < low or value > high:
            raise ConfigError(f"'{key}' = {value} outside valid range [{low}, {high}]")
    if key == 'eros_kernel' and value % 2 != 1:
        raise ConfigError(f"'eros_kernel' must be odd, got {value}")
    if key == 'tracker_mode' and value not in TRACKER_MODES:
        raise ConfigError(f"'tracker_mode' must be one of {TRACKER_MODES}, got {value!r}")
    if key == 'ukf_process_model' and value not in UKF_PROCESS_MODELS:
        raise ConfigError(f"'ukf_process_model' must be one of {UKF_PROCESS_MODELS}, got {value!r}")


def _convert(key: str, raw, kind):
    if not isinstance(raw, str):
        return raw
    name = kind if isinstance(kind, str) else getattr(kind, '__name__', str(kind))
    try:
        if name == 'bool':
            lowered = raw.lower()
            if lowered in ('true', 'yes', 'on', '1'):
                return True
            if lowered in ('false', 'no', 'off', '0'):
                return False
            raise ValueError(raw)
        if name == 'int':
            return int(raw)
        if name == 'float':
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"'{key}' expects {name}, got {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)

"""Pipeline configuration: one flat set of named parameters with defaults.

Unknown keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .nlls import SolverConfig


@dataclass(frozen=True)
class PipelineConfig:
    # tracking
    ratio: float = 0.7
    descriptor_metric: str = "l2"
    ransac_tol: float = 3.0
    ransac_iters: int = 1000
    ransac_confidence: float | None = None  # None: always draw ransac_iters samples
    min_consensus: int = 8
    track_window: int = 300
    # phase 1
    min_track_len: int = 3
    parallax_min_deg: float = 1.0
    depth_max: float = 200.0
    sigma_b: float = 0.005
    odom_sigma_t_frac: float = 0.01
    odom_sigma_r_deg: float = 0.2
    dcs_phi: float | None = 1.0  # None disables the robust kernel
    dcs_points: bool = True
    dcs_joint: bool = True
    # solver
    max_iters: int = 100
    lm_lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    rel_tol: float = 1e-6
    abs_tol: float = 1e-12
    # retrieval
    vocab_k: int = 256
    codebook_max_iters: int = 50
    top_k: int = 10
    min_inliers: int = 20
    query_stride: int = 5
    # phase 2
    pano_views: str = "all"  # all | accepted
    min_corr: int = 12
    min_view_corr: int = 6
    rig_spacing_deg: float = 45.0
    rig_information: float = 1e8
    group_ratio: float = 0.7
    pano_landmarks: str = "longest"  # longest | all
    pano_min_support: int = 6
    pano_sigma_b: float = 0.005
    pano_dcs_phi: float | None = None
    yaw_steps: int = 12
    max_dist: float = 100.0
    georef_mode: str = "connected"  # connected | independent
    georef_heading_weight_m: float = 10.0
    # raster panoramas
    view_fov_deg: float = 90.0
    view_size: int = 512
    # randomness
    seed: int = 0

    def __post_init__(self):
        choices = {
            "descriptor_metric": ("l2", "sqeuclidean"),
            "pano_views": ("all", "accepted"),
            "pano_landmarks": ("longest", "all"),
            "georef_mode": ("connected", "independent"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        positive = ("ransac_tol", "ransac_iters", "sigma_b", "pano_sigma_b", "vocab_k", "top_k", "query_stride",
                    "max_iters", "rig_spacing_deg", "yaw_steps", "view_size", "depth_max")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError("ratio must lie in (0, 1]")
        if self.dcs_phi is not None and self.dcs_phi <= 0:
            raise ConfigError("dcs_phi must be positive or null")
        if abs(360.0 / self.rig_spacing_deg - round(360.0 / self.rig_spacing_deg)) > 1e-9:
            raise ConfigError("rig_spacing_deg must divide 360")

    # ------------------------------------------------------------ helpers

    @property
    def parallax_min(self):
        return math.radians(self.parallax_min_deg)

    @property
    def odom_sigma_r(self):
        return math.radians(self.odom_sigma_r_deg)

    @property
    def n_views(self):
        return int(round(360.0 / self.rig_spacing_deg))

    def solver(self) -> SolverConfig:
        return SolverConfig(self.max_iters, self.lm_lambda0, self.lambda_up, self.lambda_down, self.rel_tol,
                            self.abs_tol)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        clean = {k: _coerce(k, v, types[k]) for k, v in d.items()}
        return cls(**clean)

    def replace(self, **changes):
        return PipelineConfig.from_dict({**self.to_dict(), **changes})


def _coerce(key, value, typ):
    """Check JSON values against the annotated field type."""
    typ = str(typ)
    nullable = "None" in typ
    if value is None:
        if nullable:
            return None
        raise ConfigError(f"{key} must not be null")
    if typ.startswith("bool"):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be true or false")
    if typ.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if typ.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if typ.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


def parse_override(text):
    """``key=value`` with a JSON value (bare words are taken as strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path=None, overrides=()):
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for item in overrides:
        k, v = parse_override(item)
        data[k] = v
    return PipelineConfig.from_dict(data)

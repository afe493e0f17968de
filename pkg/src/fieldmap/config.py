"""Typed configuration sections with TOML load/dump and field-level validation.

Every section is a dataclass whose defaults are the embedded defaults; a
config file only needs the keys it overrides. Dumping a loaded config writes
every key, so output directories are self-describing.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli
import tomli_w

from fieldmap.core.types import StereoCamera
from fieldmap.errors import ConfigError

RANGE = "range"
ORBIT = "orbit"


def _positive(section, name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"{section}.{name} must be a positive number, got {value!r}", f"{section}.{name}")


def _non_negative(section, name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
        raise ConfigError(f"{section}.{name} must be non-negative, got {value!r}", f"{section}.{name}")


def _rate(section, name, value):
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
        raise ConfigError(f"{section}.{name} must lie in [0, 1], got {value!r}", f"{section}.{name}")


@dataclass
class CameraConfig:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    baseline: float = 0.1
    width: int = 640
    height: int = 480

    def validate(self):
        for name in ("fx", "fy", "baseline", "width", "height"):
            _positive("camera", name, getattr(self, name))
        if not 0 <= self.cx < self.width:
            raise ConfigError("camera.cx must lie inside the image", "camera.cx")
        if not 0 <= self.cy < self.height:
            raise ConfigError("camera.cy must lie inside the image", "camera.cy")

    def stereo_camera(self) -> StereoCamera:
        return StereoCamera(self.fx, self.fy, self.cx, self.cy, self.baseline, (self.width, self.height))


@dataclass
class LatticeConfig:
    """Seed shell of one panicle. Stand-in values: real panicle geometry is not published."""

    semi_axes: list = field(default_factory=lambda: [0.06, 0.15, 0.06])  # x, y (vertical), z
    seeds_per_panicle: int = 300
    jitter: float = 0.1  # static lattice irregularity, fraction of the seed pitch
    size_variation: float = 0.1  # per-panicle relative scale spread
    seed_radius: float = 0.002

    def validate(self):
        if len(self.semi_axes) != 3:
            raise ConfigError("lattice.semi_axes needs three values", "lattice.semi_axes")
        for v in self.semi_axes:
            _positive("lattice", "semi_axes", v)
        if not (isinstance(self.seeds_per_panicle, int) and self.seeds_per_panicle >= 5):
            raise ConfigError("lattice.seeds_per_panicle must be an integer >= 5", "lattice.seeds_per_panicle")
        _non_negative("lattice", "jitter", self.jitter)
        _rate("lattice", "size_variation", self.size_variation)
        _positive("lattice", "seed_radius", self.seed_radius)


@dataclass
class TrajectoryConfig:
    speed: float = 0.05  # m per frame
    standoff: float = 0.6  # camera to panicle axis, m
    bounce_amplitude: float = 0.005  # m
    bounce_period: float = 20.0  # frames

    def validate(self):
        _positive("trajectory", "speed", self.speed)
        _positive("trajectory", "standoff", self.standoff)
        _non_negative("trajectory", "bounce_amplitude", self.bounce_amplitude)
        _positive("trajectory", "bounce_period", self.bounce_period)


@dataclass
class NoiseConfig:
    pixel_sigma: float = 1.0
    dropout: float = 0.1
    false_positive_rate: float = 0.05  # expected false detections per true detection
    wind_sigma: float = 0.0  # per-frame common-mode seed jitter, m
    fk_translation_sigma: float = 0.005  # m
    fk_rotation_sigma_deg: float = 0.5
    depth_pixel_sigma: float = 0.5  # disparity noise of the dense cloud, px

    def validate(self):
        _non_negative("noise", "pixel_sigma", self.pixel_sigma)
        _rate("noise", "dropout", self.dropout)
        _rate("noise", "false_positive_rate", self.false_positive_rate)
        for name in ("wind_sigma", "fk_translation_sigma", "fk_rotation_sigma_deg", "depth_pixel_sigma"):
            _non_negative("noise", name, getattr(self, name))


@dataclass
class OrbitConfig:
    radius: float = 0.35
    arc_degrees: float = 90.0
    step_degrees: float = 5.0
    points_per_seed: int = 12
    clutter_density: float = 0.5  # clutter points per seed-surface point
    outlier_fraction: float = 0.02  # spurious stereo points per surface point
    clutter_scatter: float = 0.05  # radial spread of inter-seed points, fraction of the shell size
    clutter_pixel_sigma: float = 2.0  # disparity noise of inter-seed points, px

    def validate(self):
        _positive("orbit", "radius", self.radius)
        if not (0 < self.arc_degrees <= 360):
            raise ConfigError("orbit.arc_degrees must lie in (0, 360]", "orbit.arc_degrees")
        _positive("orbit", "step_degrees", self.step_degrees)
        if not (isinstance(self.points_per_seed, int) and self.points_per_seed >= 1):
            raise ConfigError("orbit.points_per_seed must be a positive integer", "orbit.points_per_seed")
        _non_negative("orbit", "clutter_density", self.clutter_density)
        _rate("orbit", "outlier_fraction", self.outlier_fraction)
        _rate("orbit", "clutter_scatter", self.clutter_scatter)
        _non_negative("orbit", "clutter_pixel_sigma", self.clutter_pixel_sigma)


@dataclass
class SceneConfig:
    kind: str = RANGE
    rng_seed: int = 0
    range_length: float = 4.0
    panicle_count: int = 16
    panicle_spacing: float = 0.3
    camera: CameraConfig = field(default_factory=CameraConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    orbit: OrbitConfig = field(default_factory=OrbitConfig)

    def validate(self) -> "SceneConfig":
        if self.kind not in (RANGE, ORBIT):
            raise ConfigError(f"scene.kind must be {RANGE!r} or {ORBIT!r}", "scene.kind")
        if not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ConfigError("scene.rng_seed must be a non-negative integer", "scene.rng_seed")
        _positive("scene", "range_length", self.range_length)
        if not (isinstance(self.panicle_count, int) and self.panicle_count >= 1):
            raise ConfigError("scene.panicle_count must be a positive integer", "scene.panicle_count")
        _positive("scene", "panicle_spacing", self.panicle_spacing)
        for section in (self.camera, self.lattice, self.trajectory, self.noise, self.orbit):
            section.validate()
        return self

    @property
    def frame_count(self) -> int:
        if self.kind == RANGE:
            return int(math.floor(self.range_length / self.trajectory.speed + 1e-9)) + 1
        return int(math.floor(self.orbit.arc_degrees / self.orbit.step_degrees + 1e-9)) + 1


@dataclass
class MatchConfig:
    """Structural matcher and filters; ``None`` means derive from the image width."""

    delta: Optional[float] = None
    epsilon: Optional[float] = None
    r: Optional[float] = None
    threshold: Optional[float] = None
    cost_variant: str = "literal"
    max_vertical: float = 10.0
    min_disparity: float = 0.5
    baseline_max_dist: float = 100.0

    def validate(self):
        if self.cost_variant not in ("literal", "deviation"):
            raise ConfigError("match.cost_variant must be 'literal' or 'deviation'", "match.cost_variant")
        for name in ("delta", "epsilon", "threshold"):
            value = getattr(self, name)
            if value is not None:
                _positive("match", name, value)
        if self.r is not None:
            _non_negative("match", "r", self.r)
        _positive("match", "max_vertical", self.max_vertical)
        _non_negative("match", "min_disparity", self.min_disparity)
        _positive("match", "baseline_max_dist", self.baseline_max_dist)

    def matcher_params(self, image_width):
        from fieldmap.association import MatcherParams

        overrides = {
            k: getattr(self, k) for k in ("delta", "epsilon", "r", "threshold") if getattr(self, k) is not None
        }
        return MatcherParams.for_image_width(image_width, cost_variant=self.cost_variant, **overrides)


@dataclass
class BackendConfig:
    sigma_px: float = 1.0
    sigma_odo_translation: float = 0.02
    sigma_odo_rotation_deg: float = 1.0
    huber: bool = True
    huber_k: float = 2.0
    window: int = 10
    max_iters: int = 10
    lambda_init: float = 1e-3
    tol: float = 1e-9
    k_min: int = 5
    lost_window: int = 3
    inlier_px: float = 4.0
    ransac_iters: int = 100

    def validate(self):
        for name in ("sigma_px", "sigma_odo_translation", "sigma_odo_rotation_deg", "huber_k",
                     "lambda_init", "inlier_px"):
            _positive("backend", name, getattr(self, name))
        _non_negative("backend", "tol", self.tol)
        for name in ("window", "max_iters", "k_min", "lost_window", "ransac_iters"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value >= 1):
                raise ConfigError(f"backend.{name} must be a positive integer", f"backend.{name}")


@dataclass
class IcpSection:
    mode: str = "seed_centers"
    max_iterations: int = 50
    radius_full_cloud: float = 0.02
    radius_seed_centers: float = 0.05
    convergence_tol: float = 1e-6
    trim_fraction: float = 0.1
    voxel: float = 0.03  # fused model spacing, m
    registration_voxel: float = 0.03  # full-cloud spacing before registration, m; 0 keeps every point

    def validate(self):
        if self.mode not in ("full_cloud", "seed_centers"):
            raise ConfigError("icp.mode must be 'full_cloud' or 'seed_centers'", "icp.mode")
        if not (isinstance(self.max_iterations, int) and self.max_iterations >= 1):
            raise ConfigError("icp.max_iterations must be a positive integer", "icp.max_iterations")
        for name in ("radius_full_cloud", "radius_seed_centers", "voxel"):
            _positive("icp", name, getattr(self, name))
        _non_negative("icp", "registration_voxel", self.registration_voxel)
        _non_negative("icp", "convergence_tol", self.convergence_tol)
        if not 0 <= self.trim_fraction < 0.5:
            raise ConfigError("icp.trim_fraction must lie in [0, 0.5)", "icp.trim_fraction")


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    icp: IcpSection = field(default_factory=IcpSection)

    def validate(self) -> "RunConfig":
        self.scene.validate()
        self.match.validate()
        self.backend.validate()
        self.icp.validate()
        return self


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix} must be a table", prefix)
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {prefix}.{key}", f"{prefix}.{key}")
        default = known[key].default_factory() if known[key].default_factory is not dataclasses.MISSING else known[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{prefix}.{key}")
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _as_toml_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = _as_toml_dict(value)
        elif value is not None:
            out[f.name] = value
    return out


def scene_config_from_dict(data: dict) -> SceneConfig:
    return _build(SceneConfig, data, "scene").validate()


def run_config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "run").validate()


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_run_config(path=None) -> RunConfig:
    """Load a run config; a bare scene table (no [scene] header) is accepted too."""
    if path is None:
        return RunConfig().validate()
    data = load_toml(path)
    if data and not set(data) <= {"scene", "match", "backend", "icp"}:
        data = {"scene": data}
    return run_config_from_dict(data)


def dumps(config) -> str:
    return tomli_w.dumps(_as_toml_dict(config))


def dump(config, path) -> None:
    Path(path).write_text(dumps(config))


def to_dict(config) -> dict[str, Any]:
    return _as_toml_dict(config)

"""Scenario configuration: YAML in, validated dataclasses out.

Every section maps to a dataclass; unknown keys are rejected and failures
carry the dotted path of the offending field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import ConfigDict, TypeAdapter, ValidationError

from ..detector import DetectorParams
from ..tracker import TrackerConfig
from ..voxel_grid import OccupancyParams

_FORBID = ConfigDict(extra="forbid")

# the library parameter classes double as config sections
for _cls in (DetectorParams, TrackerConfig, OccupancyParams):
    _cls.__pydantic_config__ = _FORBID  # type: ignore[attr-defined]


class ConfigError(ValueError):
    """Invalid scenario configuration; ``errors`` lists ``(path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]], source: str = "<config>"):
        self.errors = errors
        self.source = source
        lines = [f"{source}: invalid configuration"] + [f"  {p}: {m}" for p, m in errors]
        super().__init__("\n".join(lines))


Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class BoxConfig:
    __pydantic_config__ = _FORBID
    min: Vec3
    max: Vec3

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise ValueError("box min must be below max on every axis")


@dataclass(frozen=True)
class SceneConfig:
    __pydantic_config__ = _FORBID
    # height of the ground plane (None: no ground)
    ground_z: Optional[float] = 0.1
    boxes: list[BoxConfig] = field(default_factory=list)


@dataclass(frozen=True)
class TrajectoryConfig:
    """Piecewise-linear path through ``[t, x, y, z]`` waypoints, held constant outside."""

    __pydantic_config__ = _FORBID
    waypoints: list[tuple[float, float, float, float]]

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("at least one waypoint is required")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint times must be strictly increasing")


@dataclass(frozen=True)
class ObserverConfig:
    __pydantic_config__ = _FORBID
    trajectory: TrajectoryConfig
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0


@dataclass(frozen=True)
class TargetConfig:
    __pydantic_config__ = _FORBID
    trajectory: TrajectoryConfig
    shape: Literal["sphere", "box"] = "sphere"
    radius: float = 0.325
    half_extent: Vec3 = (0.325, 0.325, 0.1)
    # target absent before this time (lets the map learn free space first)
    appear_time: float = 0.0

    def __post_init__(self):
        if not self.radius > 0 or min(self.half_extent) <= 0:
            raise ValueError("target size must be > 0")


@dataclass(frozen=True)
class SensorConfig:
    __pydantic_config__ = _FORBID
    rows: int = 128
    cols: int = 1024
    vertical_fov: float = 45.0
    rate_hz: float = 10.0
    max_range: float = 100.0
    range_precision: float = 0.05
    # returns closer than this are flagged as self-hits and masked
    self_mask_range: float = 0.0


@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations; applied per scan (pose) and per ray (range)."""

    __pydantic_config__ = _FORBID
    translation: float = 0.0
    angles: float = 0.0
    range: float = 0.0

    def __post_init__(self):
        if min(self.translation, self.angles, self.range) < 0:
            raise ValueError("noise standard deviations must be >= 0")


@dataclass(frozen=True)
class GridConfig:
    __pydantic_config__ = _FORBID
    origin: Vec3 = (-20.0, -20.0, -1.0)
    voxel_size: float = 0.25
    dims: tuple[int, int, int] = (160, 160, 40)


@dataclass(frozen=True)
class BgRemovalConfig:
    __pydantic_config__ = _FORBID
    enabled: bool = True
    n_conf_min: int = 24
    d_sep: Optional[float] = None


@dataclass(frozen=True)
class PipelineConfig:
    __pydantic_config__ = _FORBID
    d_max: float = 20.0
    # a-priori map: "none", "scene" (static geometry as occupied) or "scene_pinned"
    prior: Literal["none", "scene", "scene_pinned"] = "scene"
    # "post_update": separated clusters are found on the map after this tick's
    # point/ray batch and reset at once; "snapshot": found on the same read
    # snapshot as the detector, then merged per ``sep_precedence``
    sep_stage: Literal["post_update", "snapshot"] = "post_update"
    # snapshot stage only. "sequential": separated-cluster free updates run after
    # the point/ray batch; "point_first": they join it and lose to point classes
    sep_precedence: Literal["sequential", "point_first"] = "sequential"
    threaded: bool = False
    # detections reach the tracker this many ticks late
    detection_delay: int = 0

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError("d_max must be > 0")
        if self.detection_delay < 0:
            raise ValueError("detection_delay must be >= 0")


@dataclass(frozen=True)
class MetricsConfig:
    __pydantic_config__ = _FORBID
    match_radius: float = 2.0
    bin_edges: list[float] = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0, 100.0])
    # ticks before this time are not scored
    eval_start: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    __pydantic_config__ = _FORBID
    observer: ObserverConfig
    target: TargetConfig
    name: str = "scenario"
    duration: float = 30.0
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    occupancy: OccupancyParams = field(default_factory=OccupancyParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    bg_removal: BgRemovalConfig = field(default_factory=BgRemovalConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.sensor.rate_hz))


_ADAPTER = TypeAdapter(ScenarioConfig)


def _loc(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def config_from_dict(data: dict, source: str = "<config>") -> ScenarioConfig:
    try:
        return _ADAPTER.validate_python(data)
    except ValidationError as e:
        raise ConfigError([(_loc(err["loc"]), err["msg"]) for err in e.errors()], source) from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError([("<file>", str(e))], str(path)) from None
    except yaml.YAMLError as e:
        raise ConfigError([("<yaml>", str(e))], str(path)) from None
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "expected a mapping at the top level")], str(path))
    return config_from_dict(data, str(path))


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return _ADAPTER.dump_python(cfg, mode="json")

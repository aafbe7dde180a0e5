"""Hit-probability and detection-probability curves over distance.

A curves config lists noise levels (one curve each) for the per-voxel hit
probability, and sensor layouts for the chance that a sphere is hit by at
least one ray.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import TypeAdapter, ValidationError

from ..core import OS0_128, OS1_128, Pose, SensorSpec
from ..uncertainty import NoiseSpec, detection_probability, hit_probability_curve, write_curves_csv
from .config import _FORBID, ConfigError, SensorConfig, Vec3, _loc


@dataclass(frozen=True)
class DistanceRange:
    __pydantic_config__ = _FORBID
    start: float = 1.0
    stop: float = 50.0
    num: int = 50

    def __post_init__(self):
        if not (0 < self.start <= self.stop) or self.num < 1:
            raise ValueError("need 0 < start <= stop and num >= 1")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.num)


@dataclass(frozen=True)
class NoiseCurve:
    """One curve: standard deviations of position (m), angles (rad) and range (m)."""

    __pydantic_config__ = _FORBID
    label: str
    translation: float = 0.0
    angles: float = 0.0
    range: float = 0.0

    def __post_init__(self):
        if min(self.translation, self.angles, self.range) < 0:
            raise ValueError("noise standard deviations must be >= 0")

    def spec(self) -> NoiseSpec:
        return NoiseSpec.from_sigmas(self.translation, self.angles, self.range)


@dataclass(frozen=True)
class HitCurvesConfig:
    __pydantic_config__ = _FORBID
    noise: list[NoiseCurve]
    distances: DistanceRange = field(default_factory=DistanceRange)
    voxel_size: float = 0.25
    direction: Vec3 = (1.0, 0.0, 0.0)
    placement: Literal["centered", "grid", "average"] = "centered"
    n_points: int = 4096
    seed: int = 0


@dataclass(frozen=True)
class DetectionCurvesConfig:
    __pydantic_config__ = _FORBID
    # named presets "os0" / "os1" or explicit sensor sections
    sensors: dict[str, SensorConfig | Literal["os0", "os1"]]
    target_radius: float = 0.325
    distances: DistanceRange = field(default_factory=lambda: DistanceRange(5.0, 150.0, 30))
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.target_radius > 0:
            raise ValueError("target_radius must be > 0")


@dataclass(frozen=True)
class CurvesConfig:
    __pydantic_config__ = _FORBID
    hit_probability: Optional[HitCurvesConfig] = None
    detection_probability: Optional[DetectionCurvesConfig] = None


_ADAPTER = TypeAdapter(CurvesConfig)
_PRESETS = {"os0": OS0_128, "os1": OS1_128}


def curves_config_from_dict(data: dict, source: str = "<config>") -> CurvesConfig:
    try:
        return _ADAPTER.validate_python(data)
    except ValidationError as e:
        raise ConfigError([(_loc(err["loc"]), err["msg"]) for err in e.errors()], source) from None


def load_curves_config(path) -> CurvesConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError([("<file>", str(e))], str(path)) from None
    except yaml.YAMLError as e:
        raise ConfigError([("<yaml>", str(e))], str(path)) from None
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "expected a mapping at the top level")], str(path))
    return curves_config_from_dict(data, str(path))


def _sensor(s) -> SensorSpec:
    if isinstance(s, str):
        return _PRESETS[s]
    return SensorSpec(s.rows, s.cols, s.vertical_fov, s.rate_hz, s.max_range, s.range_precision)


def hit_curves(cfg: HitCurvesConfig) -> dict[str, np.ndarray]:
    d = cfg.distances.values()
    return {c.label: hit_probability_curve(c.spec(), d, cfg.voxel_size, cfg.direction, Pose(), cfg.placement,
                                           seed=cfg.seed, n_points=cfg.n_points)
            for c in cfg.noise}


def detection_curves(cfg: DetectionCurvesConfig) -> dict[str, np.ndarray]:
    """Per sensor, a ``(k, 3)`` table of ``(l, p, stderr)``."""
    out = {}
    for name, s in cfg.sensors.items():
        dirs = _sensor(s).directions().reshape(-1, 3)
        rows = []
        for l in cfg.distances.values():
            p, se = detection_probability(dirs, cfg.target_radius, float(l), cfg.n_samples, cfg.seed)
            rows.append((float(l), p, se))
        out[name] = np.array(rows).reshape(-1, 3)
    return out


def run_curves(cfg: CurvesConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e.strerror}") from e
    paths = []
    if cfg.hit_probability is not None:
        p = out / "hit_probability.csv"
        try:
            write_curves_csv(hit_curves(cfg.hit_probability), p)
        except OSError as e:
            raise OSError(f"cannot write {p}: {e.strerror}") from e
        paths.append(p)
    if cfg.detection_probability is not None:
        p = out / "detection_probability.csv"
        try:
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["sensor", "distance", "p", "stderr"])
                for name, table in detection_curves(cfg.detection_probability).items():
                    for l, pr, se in table:
                        w.writerow([name, repr(float(l)), repr(float(pr)), repr(float(se))])
        except OSError as e:
            raise OSError(f"cannot write {p}: {e.strerror}") from e
        paths.append(p)
    return paths

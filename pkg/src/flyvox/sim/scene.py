"""Analytic scene ray casting: ground plane, static boxes and one target."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import GridSpec, OrganizedScan, Pose, SensorSpec
from .config import NoiseConfig, ScenarioConfig, TrajectoryConfig


class Trajectory:
    """Piecewise-linear position over time; constant before the first and after the last waypoint."""

    def __init__(self, waypoints):
        w = np.asarray(waypoints, dtype=np.float64).reshape(-1, 4)
        self.t = w[:, 0]
        self.xyz = w[:, 1:]

    @classmethod
    def from_config(cls, cfg: TrajectoryConfig) -> "Trajectory":
        return cls(cfg.waypoints)

    def position(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.t, self.xyz[:, i]) for i in range(3)])

    def velocity(self, t: float) -> np.ndarray:
        if self.t.size < 2 or t < self.t[0] or t >= self.t[-1]:
            return np.zeros(3)
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        return (self.xyz[i + 1] - self.xyz[i]) / (self.t[i + 1] - self.t[i])


@dataclass(frozen=True)
class Target:
    center: np.ndarray
    shape: str = "sphere"
    radius: float = 0.325
    half_extent: tuple = (0.325, 0.325, 0.1)

    @property
    def bounding_radius(self) -> float:
        return self.radius if self.shape == "sphere" else float(np.linalg.norm(self.half_extent))


@dataclass(frozen=True)
class Scene:
    ground_z: float | None
    boxes: np.ndarray  # (k, 2, 3) min/max corners

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "Scene":
        boxes = np.array([[b.min, b.max] for b in cfg.scene.boxes], dtype=np.float64).reshape(-1, 2, 3)
        return cls(cfg.scene.ground_z, boxes)

    def occupied_mask(self, grid: GridSpec) -> np.ndarray:
        """Voxels holding scene surface: the ground voxel layer and everything overlapping a box."""
        mask = np.zeros(grid.dims, bool)
        o, vs = grid.origin_array, grid.voxel_size
        if self.ground_z is not None:
            k = int(math.floor((self.ground_z - o[2]) / vs))
            if 0 <= k < grid.dims[2]:
                mask[:, :, k] = True
        for lo, hi in self.boxes:
            a = np.clip(np.floor((lo - o) / vs).astype(int), 0, grid.dims_array)
            b = np.clip(np.ceil((hi - o) / vs).astype(int), 0, grid.dims_array)
            mask[a[0]:b[0], a[1]:b[1], a[2]:b[2]] = True
        return mask


def _reciprocal(dirs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 1.0 / dirs


def _slab(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray,
          inv: np.ndarray | None = None) -> np.ndarray:
    """Entry distance of each ray into an axis-aligned box (inf on a miss)."""
    n = dirs.shape[0]
    if inv is None:
        inv = _reciprocal(dirs)
    t_near = np.zeros(n)
    t_far = np.full(n, np.inf)
    for ax in range(3):
        o = origin[ax]
        par = dirs[:, ax] == 0
        with np.errstate(invalid="ignore"):
            t1 = (lo[ax] - o) * inv[:, ax]
            t2 = (hi[ax] - o) * inv[:, ax]
        # parallel rays never leave the slab if they start inside it, else miss
        inside = lo[ax] <= o <= hi[ax]
        np.maximum(t_near, np.where(par, -np.inf if inside else np.inf, np.minimum(t1, t2)), out=t_near)
        np.minimum(t_far, np.where(par, np.inf if inside else -np.inf, np.maximum(t1, t2)), out=t_far)
    return np.where(t_near <= t_far, t_near, np.inf)


def ray_sphere(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """First non-negative hit distance along unit ``dirs`` (inf on a miss)."""
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0, t1 = -b - sq, -b + sq
    t = np.where(t0 >= 0, t0, np.where(t1 >= 0, 0.0 if c <= 0 else t1, np.inf))
    return np.where(disc >= 0, t, np.inf)


def cast(origin: np.ndarray, dirs: np.ndarray, scene: Scene, target: Target | None):
    """Closest hit per ray: ``(distance, hit_target)``; distance is inf on a miss."""
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    if scene.ground_z is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = (scene.ground_z - origin[2]) / dirs[:, 2]
        best = np.where((tg >= 0) & np.isfinite(tg), tg, best)
    inv = _reciprocal(dirs)
    for lo, hi in scene.boxes:
        best = np.minimum(best, _slab(origin, dirs, lo, hi, inv))
    on_target = np.zeros(n, bool)
    if target is not None:
        if target.shape == "sphere":
            tt = ray_sphere(origin, dirs, target.center, target.radius)
        else:
            he = np.asarray(target.half_extent)
            tt = _slab(origin, dirs, target.center - he, target.center + he, inv)
        on_target = tt < best
        best = np.minimum(best, tt)
    return best, on_target


@dataclass
class RenderedScan:
    scan: OrganizedScan
    target_hits: int
    true_pose: Pose


def generate_scan(sensor: SensorSpec, directions: np.ndarray, pose: Pose, scene: Scene, target: Target | None,
                  t: float, noise: NoiseConfig | None = None, rng: np.random.Generator | None = None,
                  self_mask_range: float = 0.0) -> RenderedScan:
    """Render one organized scan from the true pose; the scan carries the measured (noisy) pose.

    Pose noise is drawn once per scan, range noise once per ray. Returns past
    the sensor's maximum range are reported as empty.
    """
    rows, cols = directions.shape[:2]
    d_world = directions.reshape(-1, 3) @ pose.rotation.T
    dist, on_target = cast(pose.translation, d_world, scene, target)
    empty = ~(dist <= sensor.max_range)
    mask = ~empty & (dist < self_mask_range)
    ranges = np.where(empty, 0.0, dist)
    meas_pose = pose
    if noise is not None and rng is not None:
        if noise.range > 0:
            ranges = np.where(empty, 0.0, np.maximum(ranges + rng.normal(0.0, noise.range, ranges.shape), 0.0))
        if noise.translation > 0 or noise.angles > 0:
            dt = rng.normal(0.0, noise.translation, 3) if noise.translation > 0 else np.zeros(3)
            da = rng.normal(0.0, noise.angles, 3) if noise.angles > 0 else np.zeros(3)
            meas_pose = Pose(pose.translation + dt, pose.yaw + da[2], pose.pitch + da[1], pose.roll + da[0])
    hits = int((on_target & ~empty & ~mask).sum())
    scan = OrganizedScan(ranges.reshape(rows, cols), directions, meas_pose, t,
                         empty=empty.reshape(rows, cols), mask=mask.reshape(rows, cols))
    return RenderedScan(scan, hits, pose)

"""Geometry primitives, organized scans and voxel addressing.

Points are plain ``(3,)`` / ``(n, 3)`` float64 arrays in a named frame. A
single static world frame is used throughout; the grid is axis-aligned with it.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

VoxelIndex = tuple[int, int, int]


class InvalidInputError(ValueError):
    """Raised for malformed or non-finite inputs."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(b: float) -> np.ndarray:
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(g: float) -> np.ndarray:
    c, s = math.cos(g), math.sin(g)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic z-y-x rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


@dataclass(frozen=True)
class Pose:
    """Sensor pose in the world frame.

    Orientation is stored as intrinsic z-y-x angles: ``yaw`` (gamma, about z),
    ``pitch`` (beta, about y) and ``roll`` (alpha, about x), in radians.
    """

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        t = _frozen(self.translation)
        if t.shape != (3,):
            raise InvalidInputError(f"translation must have shape (3,), got {t.shape}")
        object.__setattr__(self, "translation", t)
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (np.all(np.isfinite(t)) and all(math.isfinite(a) for a in self.angles)):
            raise InvalidInputError("pose contains non-finite values")
        object.__setattr__(self, "_R", _frozen(rotation_zyx(self.yaw, self.pitch, self.roll)))

    @property
    def angles(self) -> tuple[float, float, float]:
        return (self.yaw, self.pitch, self.roll)

    @property
    def rotation(self) -> np.ndarray:
        return self._R  # type: ignore[attr-defined]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Sensor frame -> world frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """World frame -> sensor frame."""
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned dense voxel grid: ``origin`` is the minimum corner."""

    origin: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        origin = tuple(float(o) for o in self.origin)
        dims = tuple(int(d) for d in self.dims)
        if len(origin) != 3 or len(dims) != 3:
            raise InvalidInputError("origin and dims must have three components")
        if not all(math.isfinite(o) for o in origin):
            raise InvalidInputError("grid origin must be finite")
        if not (self.voxel_size > 0 and math.isfinite(self.voxel_size)):
            raise InvalidInputError(f"voxel_size must be > 0, got {self.voxel_size}")
        if min(dims) < 1:
            raise InvalidInputError(f"dims must be >= 1 per axis, got {dims}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)

    @property
    def dims_array(self) -> np.ndarray:
        return np.array(self.dims, dtype=np.int64)

    @property
    def upper(self) -> np.ndarray:
        return self.origin_array + self.voxel_size * np.array(self.dims)

    def indices_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Voxel indices of ``(n, 3)`` points and a mask of which are inside the grid."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((pts - self.origin_array) / self.voxel_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.dims_array), axis=1)
        return idx, inside

    def contains_index(self, v) -> bool:
        return all(0 <= int(c) < d for c, d in zip(v, self.dims))

    def flat(self, idx: np.ndarray) -> np.ndarray:
        """C-order flat index of ``(n, 3)`` in-grid voxel indices."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        _, ny, nz = self.dims
        return (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]

    def unflat(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.dims), axis=-1)

    def centers(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.float64).reshape(-1, 3)
        return self.origin_array + (idx + 0.5) * self.voxel_size


def voxel_of(p, grid: GridSpec) -> VoxelIndex | None:
    """Voxel containing ``p`` (half-open per axis), or None when outside the grid."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise InvalidInputError(f"point must be a finite 3-vector, got {p!r}")
    idx, inside = grid.indices_of(p)
    if not inside[0]:
        return None
    return tuple(int(c) for c in idx[0])  # type: ignore[return-value]


def voxel_center(v: VoxelIndex, grid: GridSpec) -> np.ndarray:
    if not grid.contains_index(v):
        raise InvalidInputError(f"voxel {v} is outside the grid {grid.dims}")
    return grid.centers(np.array(v))[0]


def voxel_distance(v1: VoxelIndex, v2: VoxelIndex, grid: GridSpec) -> float:
    """Euclidean distance between voxel centers."""
    return float(np.linalg.norm(voxel_center(v1, grid) - voxel_center(v2, grid)))


def point_voxel_distance(p, v: VoxelIndex, grid: GridSpec) -> float:
    return float(np.linalg.norm(np.asarray(p, dtype=np.float64) - voxel_center(v, grid)))


@dataclass(frozen=True, eq=False)
class OrganizedScan:
    """One LiDAR revolution in the sensor's fixed ray layout.

    ``ranges`` holds meters for returns; elements flagged in ``empty`` had no
    return within range (their range value is ignored). ``mask`` marks rays
    that hit the carrying vehicle and must never be used.
    """

    ranges: np.ndarray
    directions: np.ndarray
    pose: Pose
    timestamp: float
    empty: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=np.float64)
        if ranges.ndim != 2:
            raise InvalidInputError("ranges must be a (rows, cols) array")
        rows, cols = ranges.shape
        directions = np.asarray(self.directions, dtype=np.float64)
        if directions.shape != (rows, cols, 3):
            raise InvalidInputError(f"directions must have shape {(rows, cols, 3)}, got {directions.shape}")
        if not np.allclose(np.linalg.norm(directions, axis=-1), 1.0, rtol=0.0, atol=1e-9):
            raise InvalidInputError("directions must be unit vectors")
        empty = np.zeros((rows, cols), bool) if self.empty is None else np.asarray(self.empty, bool)
        mask = np.zeros((rows, cols), bool) if self.mask is None else np.asarray(self.mask, bool)
        if empty.shape != (rows, cols) or mask.shape != (rows, cols):
            raise InvalidInputError("empty/mask must match the ranges layout")
        used = ~empty & ~mask
        if not np.all(np.isfinite(ranges[used])) or np.any(ranges[used] < 0):
            raise InvalidInputError("returns must have finite, non-negative ranges")
        if not math.isfinite(self.timestamp):
            raise InvalidInputError("timestamp must be finite")
        object.__setattr__(self, "ranges", _frozen(np.where(used, ranges, 0.0)))
        object.__setattr__(self, "directions", _frozen(directions))
        object.__setattr__(self, "empty", _frozen(empty, bool))
        object.__setattr__(self, "mask", _frozen(mask, bool))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @property
    def shape(self) -> tuple[int, int]:
        return self.ranges.shape  # type: ignore[return-value]

    @property
    def valid(self) -> np.ndarray:
        """Elements that carry a usable return."""
        return ~self.empty & ~self.mask


class WorldPoints(NamedTuple):
    """Transformed scan: ``points`` keeps the organized layout; flagged elements are zero."""

    points: np.ndarray
    valid: np.ndarray
    empty: np.ndarray
    mask: np.ndarray
    timestamp: float

    def returns(self) -> np.ndarray:
        """``(n, 3)`` world points of the valid elements, row-major order."""
        return self.points[self.valid]


def transform_scan(scan: OrganizedScan) -> WorldPoints:
    """Map every valid element to ``l * R d + t`` in the world frame."""
    R, t = scan.pose.rotation, scan.pose.translation
    pts = scan.ranges[..., None] * (scan.directions @ R.T) + t
    valid = scan.valid
    pts = np.where(valid[..., None], pts, 0.0)
    return WorldPoints(pts, valid, scan.empty, scan.mask, scan.timestamp)


# -- serialization ----------------------------------------------------------

_SCAN_MAGIC = b"FVSCAN01"
_SCAN_HEADER = struct.Struct("<8sqqd3d3d")


def write_scan(scan: OrganizedScan, path) -> None:
    """Binary layout: header (rows, cols, timestamp, t, yaw/pitch/roll), then row-major
    ranges (f8), empty (u1), mask (u1) and directions (f8, rows x cols x 3)."""
    rows, cols = scan.shape
    p = scan.pose
    with open(path, "wb") as fh:
        fh.write(_SCAN_HEADER.pack(_SCAN_MAGIC, rows, cols, scan.timestamp, *p.translation, *p.angles))
        fh.write(np.ascontiguousarray(scan.ranges, "<f8").tobytes())
        fh.write(scan.empty.astype("u1").tobytes())
        fh.write(scan.mask.astype("u1").tobytes())
        fh.write(np.ascontiguousarray(scan.directions, "<f8").tobytes())


def read_scan(path) -> OrganizedScan:
    data = Path(path).read_bytes()
    if len(data) < _SCAN_HEADER.size:
        raise InvalidInputError(f"{path}: truncated scan header")
    magic, rows, cols, ts, tx, ty, tz, yaw, pitch, roll = _SCAN_HEADER.unpack_from(data)
    if magic != _SCAN_MAGIC:
        raise InvalidInputError(f"{path}: not a flyvox scan file")
    n = rows * cols
    expected = _SCAN_HEADER.size + n * (8 + 1 + 1 + 24)
    if len(data) != expected:
        raise InvalidInputError(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _SCAN_HEADER.size
    ranges = np.frombuffer(data, "<f8", n, off).reshape(rows, cols)
    off += 8 * n
    empty = np.frombuffer(data, "u1", n, off).reshape(rows, cols).astype(bool)
    off += n
    mask = np.frombuffer(data, "u1", n, off).reshape(rows, cols).astype(bool)
    off += n
    dirs = np.frombuffer(data, "<f8", 3 * n, off).reshape(rows, cols, 3)
    pose = Pose(np.array([tx, ty, tz]), yaw, pitch, roll)
    return OrganizedScan(ranges, dirs, pose, ts, empty=empty, mask=mask)


# -- sensor layout ----------------------------------------------------------


@dataclass(frozen=True)
class SensorSpec:
    """Spinning multi-beam LiDAR with evenly spaced beams.

    Rows span ``vertical_fov`` degrees symmetrically about the horizon (row 0 on
    top); columns cover the full turn starting at azimuth 0.
    """

    rows: int = 128
    cols: int = 1024
    vertical_fov: float = 90.0
    rate_hz: float = 10.0
    max_range: float = 50.0
    range_precision: float = 0.05

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("rows and cols must be >= 1")
        if not 0 <= self.vertical_fov <= 180:
            raise InvalidInputError("vertical_fov must be within [0, 180] degrees")
        if not (self.rate_hz > 0 and self.max_range > 0 and self.range_precision >= 0):
            raise InvalidInputError("rate_hz and max_range must be > 0, range_precision >= 0")

    def elevations(self) -> np.ndarray:
        half = math.radians(self.vertical_fov) / 2.0
        if self.rows == 1:
            return np.zeros(1)
        return np.linspace(half, -half, self.rows)

    def azimuths(self) -> np.ndarray:
        return np.arange(self.cols) * (2.0 * math.pi / self.cols)

    def directions(self) -> np.ndarray:
        """``(rows, cols, 3)`` unit ray directions in the sensor frame."""
        el = self.elevations()[:, None]
        az = self.azimuths()[None, :]
        d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el) * np.ones_like(az)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


OS0_128 = SensorSpec(128, 1024, 90.0, 10.0, 50.0, 0.05)
OS1_128 = SensorSpec(128, 1024, 45.0, 10.0, 100.0, 0.05)

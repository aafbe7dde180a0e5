"""Buffered multi-target tracker with a constant-acceleration Kalman filter.

Tracks are corrected from raw scan points: each tick a track gathers the
points inside its uncertainty radius, clusters them, drops clusters close to
the static map and uses the nearest remaining centroid as its measurement.
Detections start tentative tracks that are first replayed through the newer
buffered scans, so late detections catch up with the present.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Protocol

import numpy as np
from scipy.spatial import cKDTree

from .detector import Detection, _groups, cluster_labels, first_near_point
from .voxel_grid import OccupancyGrid

log = logging.getLogger(__name__)

H = np.hstack([np.eye(3), np.zeros((3, 6))])
H.flags.writeable = False


class OutOfOrderError(ValueError):
    """A scan arrived with a timestamp not after the newest buffered one."""


@dataclass(frozen=True)
class TrackerConfig:
    N_buf: int = 10
    c_r: float = 0.5
    r_min: float = 1.5
    r_max: float = 3.0
    d_min: float = 0.7
    d_cluster: float = 0.25
    Z: float = 1.0
    Xi_r: float = 0.5
    Xi_v: float = 0.5
    Xi_a: float = 0.1
    P0_r: float = 0.5
    P0_v: float = 3.0
    P0_a: float = 3.0
    # "cbrt_det": c_r * det^(1/3) as printed; "sixth_root": c_r * det^(1/6), in meters
    radius_mode: str = "cbrt_det"
    # "shared": several tracks may use one cluster; "exclusive": first track (by id) claims it
    measurement_policy: str = "shared"

    def __post_init__(self):
        if self.N_buf < 1:
            raise ValueError("N_buf must be >= 1")
        if not self.r_max > self.r_min > 0:
            raise ValueError("need r_max > r_min > 0")
        if not (self.c_r > 0 and self.Z > 0 and self.d_cluster > 0 and self.d_min >= 0):
            raise ValueError("c_r, Z and d_cluster must be > 0, d_min >= 0")
        if min(self.Xi_r, self.Xi_v, self.Xi_a, self.P0_r, self.P0_v, self.P0_a) < 0:
            raise ValueError("noise parameters must be >= 0")
        if self.radius_mode not in ("cbrt_det", "sixth_root"):
            raise ValueError("radius_mode must be 'cbrt_det' or 'sixth_root'")
        if self.measurement_policy not in ("shared", "exclusive"):
            raise ValueError("measurement_policy must be 'shared' or 'exclusive'")

    @property
    def process_noise(self) -> np.ndarray:
        return np.diag(np.repeat([self.Xi_r ** 2, self.Xi_v ** 2, self.Xi_a ** 2], 3))

    @property
    def initial_covariance(self) -> np.ndarray:
        return np.diag(np.repeat([self.P0_r ** 2, self.P0_v ** 2, self.P0_a ** 2], 3))


@dataclass(frozen=True)
class Track:
    id: int
    x: np.ndarray  # (9,) position, velocity, acceleration
    P: np.ndarray  # (9, 9)
    n_det: int
    last_update_time: float

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[3:6]

    @property
    def acceleration(self) -> np.ndarray:
        return self.x[6:]


def transition_matrix(dt: float) -> np.ndarray:
    I = np.eye(3)
    A = np.eye(9)
    A[0:3, 3:6] = dt * I
    A[0:3, 6:9] = 0.5 * dt * dt * I
    A[3:6, 6:9] = dt * I
    return A


def predict(x: np.ndarray, P: np.ndarray, dt: float, Xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if not dt >= 0:
        raise ValueError(f"prediction step must be >= 0, got {dt}")
    A = transition_matrix(dt)
    P = A @ P @ A.T + Xi
    return A @ x, 0.5 * (P + P.T)


def correct(x: np.ndarray, P: np.ndarray, z: np.ndarray, Z_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Position-measurement update; Joseph form keeps ``P`` symmetric PSD."""
    S = H @ P @ H.T + Z_cov
    try:
        K = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(f"singular innovation covariance: {e}") from e
    x = x + K @ (np.asarray(z, dtype=np.float64) - H @ x)
    IKH = np.eye(9) - K @ H
    P = IKH @ P @ IKH.T + K @ Z_cov @ K.T
    return x, 0.5 * (P + P.T)


def uncertainty_radius(P: np.ndarray, c_r: float, r_min: float, mode: str = "cbrt_det") -> float:
    det = abs(float(np.linalg.det(P[:3, :3])))
    root = np.cbrt(det) if mode == "cbrt_det" else det ** (1.0 / 6.0)
    return max(r_min, c_r * float(root))


# -- occupied-center lookup ---------------------------------------------------


class OccupiedLookup(Protocol):
    def near(self, points: np.ndarray, d: float) -> np.ndarray:
        """Per point: is an occupied center closer than ``d``?"""


class CenterSet:
    """Occupied voxel centers given explicitly (k-d tree built on first use)."""

    def __init__(self, centers: np.ndarray):
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        self._tree = None

    def near(self, points: np.ndarray, d: float) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.centers.shape[0] == 0 or d <= 0:
            return np.zeros(points.shape[0], bool)
        if self._tree is None:
            self._tree = cKDTree(self.centers)
        dist, _ = self._tree.query(points, k=1)
        return dist < d


class GridLookup:
    """Occupied centers read straight from a map (voxels with G >= G_tent)."""

    def __init__(self, grid: OccupancyGrid, threshold: float | None = None):
        self.grid = grid
        self.threshold = grid.params.G_tent if threshold is None else threshold

    def near(self, points: np.ndarray, d: float) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if d <= 0:
            return np.zeros(points.shape[0], bool)
        return np.array([first_near_point(p, self.grid, d, self.threshold) >= 0 for p in points], bool)


def as_lookup(occupied) -> OccupiedLookup:
    if occupied is None:
        return CenterSet(np.zeros((0, 3)))
    if isinstance(occupied, (CenterSet, GridLookup)) or hasattr(occupied, "near"):
        return occupied
    if isinstance(occupied, OccupancyGrid):
        return GridLookup(occupied)
    return CenterSet(occupied)


# -- track update ---------------------------------------------------------------


def measurement_candidates(points: np.ndarray, center: np.ndarray, radius: float, occupied: OccupiedLookup,
                           cfg: TrackerConfig) -> np.ndarray:
    """Centroids of the clean clusters inside ``radius``, nearest to ``center`` first."""
    if points.shape[0] == 0:
        return np.zeros((0, 3))
    sel = points[np.einsum("ij,ij->i", points - center, points - center) <= radius * radius]
    if sel.shape[0] == 0:
        return np.zeros((0, 3))
    labels = cluster_labels(sel, cfg.d_cluster)
    cents = np.array([sel[g].mean(axis=0) for g in _groups(labels)])
    cents = cents[~occupied.near(cents, cfg.d_min)]
    order = np.argsort(np.linalg.norm(cents - center, axis=1), kind="stable")
    return cents[order]


def update_track(track: Track, points: np.ndarray, occupied, t: float, cfg: TrackerConfig,
                 Z_cov: np.ndarray | None = None, taken: list | None = None) -> tuple[Track, np.ndarray | None]:
    """Predict to ``t`` and correct with the nearest clean cluster centroid, if any.

    Returns the new track and the measurement used (or ``None``).
    """
    x, P = predict(track.x, track.P, t - track.last_update_time, cfg.process_noise)
    r = uncertainty_radius(P, cfg.c_r, cfg.r_min, cfg.radius_mode)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cands = measurement_candidates(pts, x[:3], r, as_lookup(occupied), cfg)
    if taken:
        free = [not any(np.array_equal(c, u) for u in taken) for c in cands]
        cands = cands[np.array(free, bool)] if cands.shape[0] else cands
    z = None
    if cands.shape[0]:
        z = cands[0]
        x, P = correct(x, P, z, cfg.Z ** 2 * np.eye(3) if Z_cov is None else Z_cov)
    return replace(track, x=x, P=P, last_update_time=float(t)), z


# -- tracker ---------------------------------------------------------------------


class BufferedScan(NamedTuple):
    t: float
    points: np.ndarray


class TrackRecord(NamedTuple):
    time: float
    id: int
    r: tuple
    v: tuple
    a: tuple
    r_unc: float
    n_det: int

    def flat(self) -> dict:
        out = {"time": self.time, "id": self.id}
        for name, vec in (("r", self.r), ("v", self.v), ("a", self.a)):
            out.update({f"{name}_{ax}": c for ax, c in zip("xyz", vec)})
        out.update(r_unc=self.r_unc, n_det=self.n_det)
        return out


class MultiTargetTracker:
    """Single-threaded actor: call :meth:`new_point_cloud` then :meth:`new_detections` per tick."""

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.buffer: deque[BufferedScan] = deque(maxlen=config.N_buf)
        self._tracks: list[Track] = []
        self._ids = itertools.count(1)

    @property
    def tracks(self) -> tuple[Track, ...]:
        return tuple(self._tracks)

    def radius(self, track: Track) -> float:
        c = self.config
        return uncertainty_radius(track.P, c.c_r, c.r_min, c.radius_mode)

    def _step_all(self, tracks: list[Track], points, occupied, t) -> list[Track]:
        taken: list | None = [] if self.config.measurement_policy == "exclusive" else None
        out = []
        for tr in tracks:
            tr, z = update_track(tr, points, occupied, t, self.config, taken=taken)
            if taken is not None and z is not None:
                taken.append(z)
            out.append(tr)
        return out

    def new_point_cloud(self, points: np.ndarray, occupied, t: float) -> None:
        """Buffer the scan, update every track with it, drop tracks that got too uncertain."""
        t = float(t)
        if self.buffer and t <= self.buffer[-1].t:
            raise OutOfOrderError(f"scan at t={t} is not after the newest buffered scan t={self.buffer[-1].t}")
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.buffer.append(BufferedScan(t, pts))
        occupied = as_lookup(occupied)
        kept = self._step_all(self._tracks, pts, occupied, t)
        self._tracks = [tr for tr in kept if self.radius(tr) <= self.config.r_max]

    def new_detections(self, detections: Iterable[Detection], occupied, t_k: float | None = None) -> None:
        """Start a tentative track per detection, replay it through newer buffered scans,
        then merge it into a similar track or keep it."""
        cfg = self.config
        occupied = as_lookup(occupied)
        for det in detections:
            tk = float(det.timestamp if t_k is None else t_k)
            cand = Track(-1, np.r_[np.asarray(det.position, dtype=np.float64), np.zeros(6)],
                         cfg.initial_covariance, 1, tk)
            if self.buffer and tk < self.buffer[0].t:
                log.warning("detection at t=%s predates the scan buffer (oldest t=%s); not re-tracked",
                            tk, self.buffer[0].t)
            else:
                for scan in self.buffer:
                    if scan.t > tk:
                        cand, _ = update_track(cand, scan.points, occupied, scan.t, cfg)
            r_c = self.radius(cand)
            if r_c > cfg.r_max:
                continue
            best, best_d = None, math.inf
            for i, tr in enumerate(self._tracks):
                d = float(np.linalg.norm(tr.position - cand.position))
                if d <= self.radius(tr) + r_c and d < best_d:
                    best, best_d = i, d
            if best is not None:
                tr = self._tracks[best]
                self._tracks[best] = replace(tr, n_det=tr.n_det + 1)
            else:
                self._tracks.append(replace(cand, id=next(self._ids)))

    def records(self, time: float) -> list[TrackRecord]:
        return [TrackRecord(float(time), tr.id, tuple(map(float, tr.position)), tuple(map(float, tr.velocity)),
                            tuple(map(float, tr.acceleration)), self.radius(tr), tr.n_det)
                for tr in self._tracks]


def tracks_similar(a: Track, b: Track, cfg: TrackerConfig) -> bool:
    ra = uncertainty_radius(a.P, cfg.c_r, cfg.r_min, cfg.radius_mode)
    rb = uncertainty_radius(b.P, cfg.c_r, cfg.r_min, cfg.radius_mode)
    return float(np.linalg.norm(a.position - b.position)) <= ra + rb


TRACK_FIELDS = ["time", "id", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "a_x", "a_y", "a_z", "r_unc", "n_det"]


def write_tracks_csv(records: Iterable[TrackRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACK_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(r.flat())


def write_tracks_jsonl(records: Iterable[TrackRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r._asdict()) + "\n")

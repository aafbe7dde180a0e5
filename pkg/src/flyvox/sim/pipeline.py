"""Per-tick wiring of transform, detector, raycaster, separated-cluster removal,
map update and tracker."""
from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..bg_removal import separated_voxels
from ..core import GridSpec, OrganizedScan, transform_scan
from ..detector import Detection, DetectorParams, ScanClassification, process_scan
from ..raycaster import IntersectionSet, accumulate, build_rays
from ..tracker import GridLookup, MultiTargetTracker, TrackerConfig, TrackRecord
from ..voxel_grid import OccupancyGrid, OccupancyParams
from .config import BgRemovalConfig, PipelineConfig

STAGES = ("transform", "detect", "raycast", "bg_removal", "map_update", "tracker")


@dataclass
class TickOutput:
    t: float
    detections: list[Detection]
    tracks: list[TrackRecord]
    classification: ScanClassification
    n_separated: int
    timings: dict[str, float] = field(default_factory=dict)


class Pipeline:
    """Stateful detector/tracker fed with one organized scan per tick.

    Detector and raycaster only read the map; their updates are applied as one
    batch afterwards. Separated-cluster removal runs either on the same read
    snapshot or, by default, on the map after that batch.
    """

    def __init__(self, spec: GridSpec, occupancy: OccupancyParams = OccupancyParams(),
                 detector: DetectorParams = DetectorParams(), bg: BgRemovalConfig = BgRemovalConfig(),
                 tracker: TrackerConfig = TrackerConfig(), pipeline: PipelineConfig = PipelineConfig(),
                 grid: OccupancyGrid | None = None):
        self.grid = grid if grid is not None else OccupancyGrid(spec, occupancy)
        self.detector = detector
        self.bg = bg
        self.cfg = pipeline
        self.tracker = MultiTargetTracker(tracker)
        self._inter = IntersectionSet(spec)
        self._mark = np.zeros(spec.size, bool)
        self._pending: deque[list[Detection]] = deque()
        self._pool = ThreadPoolExecutor(max_workers=3) if pipeline.threaded else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _raycast(self, scan: OrganizedScan) -> IntersectionSet:
        self._inter.weights.fill(0.0)
        return accumulate(build_rays(scan, self.cfg.d_max), self.grid.spec, out=self._inter)

    def _separated(self) -> np.ndarray:
        if not self.bg.enabled:
            return np.zeros(0, np.int64)
        return separated_voxels(self.grid, self.bg.n_conf_min, self.bg.d_sep)

    def process(self, scan: OrganizedScan, extra_detections: list[Detection] | None = None) -> TickOutput:
        tm: dict[str, float] = {}
        clock = time.perf_counter

        c = clock()
        points = transform_scan(scan).returns()
        tm["transform"] = clock() - c

        t = scan.timestamp
        on_snapshot = self.cfg.sep_stage == "snapshot"
        no_sep = np.zeros(0, np.int64)
        if self._pool is None:
            c = clock()
            cls = process_scan(points, self.grid, self.detector, t)
            tm["detect"] = clock() - c
            c = clock()
            inter = self._raycast(scan)
            tm["raycast"] = clock() - c
            if on_snapshot:
                c = clock()
                sep = self._separated()
                tm["bg_removal"] = clock() - c
        else:
            def timed(name, fn, *a):
                s = clock()
                out = fn(*a)
                tm[name] = clock() - s
                return out
            f_det = self._pool.submit(timed, "detect", process_scan, points, self.grid, self.detector, t)
            f_ray = self._pool.submit(timed, "raycast", self._raycast, scan)
            f_sep = self._pool.submit(timed, "bg_removal", self._separated) if on_snapshot else None
            cls, inter = f_det.result(), f_ray.result()
            if f_sep is not None:
                sep = f_sep.result()

        c = clock()
        self._apply(cls, inter, sep if on_snapshot else no_sep)
        tm["map_update"] = clock() - c

        if not on_snapshot:
            # clusters freshly re-occupied by a departing object are reset in the same tick
            c = clock()
            sep = self._separated()
            if sep.size:
                self.grid.apply_flat(sep, self.grid.params.g_free, 1.0)
            tm["bg_removal"] = clock() - c

        c = clock()
        occupied = GridLookup(self.grid)
        self.tracker.new_point_cloud(points, occupied, t)
        dets = list(cls.detections) + list(extra_detections or [])
        self._pending.append(dets)
        if len(self._pending) > self.cfg.detection_delay:
            self.tracker.new_detections(self._pending.popleft(), occupied)
        tm["tracker"] = clock() - c

        return TickOutput(t, list(cls.detections), self.tracker.records(t), cls, int(sep.size), tm)

    def _apply(self, cls: ScanClassification, inter: IntersectionSet, sep: np.ndarray) -> None:
        """Point-class updates win over ray free-space weight in the same voxel."""
        grid, p = self.grid, self.grid.params
        flat_p, g_p, n_p = cls.coefficients_and_weights(grid)
        w = inter.weights
        if self.cfg.sep_precedence == "point_first" and sep.size:
            w[sep] += 1.0
        grid.apply_flat(flat_p, g_p, n_p)
        self._mark[flat_p] = True
        grid.apply_dense(w, p.g_free, skip=self._mark)
        self._mark[flat_p] = False
        if self.cfg.sep_precedence == "sequential" and sep.size:
            grid.apply_flat(sep, p.g_free, 1.0)

"""Per-scan clustering, cluster classification and detection output."""
from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._backend import kernels
from .core import InvalidInputError
from .voxel_grid import OccupancyGrid


class ClusterLabel(enum.IntEnum):
    BACKGROUND = 0
    FLYING_OBJECT = 1
    UNKNOWN = 2


@dataclass(frozen=True)
class DetectorParams:
    d_cluster: float = 0.25
    d_close: float = 0.7
    d_search: float = 3.0
    min_cluster_size: int = 1
    # Rule A threshold: "tentative" (G >= G_tent) or "confident" (G >= G_conf).
    near_state: str = "tentative"

    def __post_init__(self):
        if not (self.d_cluster > 0 and self.d_close > 0 and self.d_search > 0):
            raise ValueError("d_cluster, d_close and d_search must be > 0")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")
        if self.near_state not in ("tentative", "confident"):
            raise ValueError("near_state must be 'tentative' or 'confident'")


@dataclass
class Cluster:
    points: np.ndarray
    label: ClusterLabel | None = None

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class Detection:
    position: np.ndarray
    point_count: int
    timestamp: float

    def record(self) -> dict:
        x, y, z = (float(c) for c in self.position)
        return {"timestamp": self.timestamp, "x": x, "y": y, "z": z, "point_count": int(self.point_count)}


# Forward half of the 5x5x5 cell neighbourhood (cells are d/sqrt(3) wide, so a
# link of length <= d can span at most two cells per axis), as (dx, dy) columns
# with the z window each covers; z neighbours have consecutive keys.
_CELL_COLUMNS = [(a, b, -2, 2) for a, b in itertools.product(range(-2, 3), repeat=2) if (a, b) > (0, 0)]
_CELL_COLUMNS.append((0, 0, 1, 2))


def cluster_labels(points: np.ndarray, d_cluster: float) -> np.ndarray:
    """Connected components of the ``<= d_cluster`` proximity graph.

    Labels are consecutive integers in order of each cluster's first point.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if not d_cluster > 0:
        raise InvalidInputError("d_cluster must be > 0")
    # any two points inside one cell are closer than d_cluster
    cell = d_cluster / math.sqrt(3.0) * (1.0 - 1e-9)
    c = np.floor((pts - pts.min(axis=0)) / cell).astype(np.int64) + 2
    ext = c.max(axis=0) + 3
    keys = (c[:, 0] * ext[1] + c[:, 1]) * ext[2] + c[:, 2]
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    uniq, start = np.unique(skeys, return_index=True)
    end = np.r_[start[1:], n].astype(np.int64)
    start = start.astype(np.int64)

    col = np.array([(a * ext[1] + b) * ext[2] for a, b, _, _ in _CELL_COLUMNS], dtype=np.int64)
    lo_off = col + np.array([w[2] for w in _CELL_COLUMNS], dtype=np.int64)
    hi_off = col + np.array([w[3] for w in _CELL_COLUMNS], dtype=np.int64)
    roots = kernels.union_neighbor_cells(pts[order], uniq.astype(np.int64), start, end, lo_off, hi_off,
                                         d_cluster * d_cluster)
    labels = np.empty(n, dtype=np.int64)
    labels[order] = np.repeat(np.asarray(roots), end - start)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.ravel()]


def extract_clusters(points: np.ndarray, d_cluster: float) -> list[Cluster]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = cluster_labels(pts, d_cluster)
    return [Cluster(pts[idx]) for idx in _groups(labels)]


def _groups(labels: np.ndarray) -> list[np.ndarray]:
    if labels.size == 0:
        return []
    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, cuts)


def _near_threshold(grid: OccupancyGrid, params: DetectorParams) -> float:
    return grid.params.G_tent if params.near_state == "tentative" else grid.params.G_conf


def first_near_point(points: np.ndarray, grid: OccupancyGrid, d_close: float, threshold: float) -> int:
    """Index of the first point closer than ``d_close`` to a voxel >= threshold, or -1."""
    s = grid.spec
    return int(kernels.first_near_occupied(
        np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3), grid.flat_values,
        s.origin_array, s.voxel_size, s.dims_array, float(threshold), float(d_close), False,
    ))


def near_occupied(p, grid: OccupancyGrid, d_close: float, threshold: float | None = None) -> bool:
    """Rule A for one point: an at-least-tentative voxel center lies closer than d_close."""
    if not d_close > 0:
        raise InvalidInputError("d_close must be > 0")
    thr = grid.params.G_tent if threshold is None else threshold
    return first_near_point(np.asarray(p, dtype=np.float64), grid, d_close, thr) >= 0


def is_floating(points: np.ndarray, grid: OccupancyGrid, d_search: float) -> bool:
    """Rule B: every point's voxel is walled off from occupancy by confident-free voxels.

    Flood fill over 6-neighbourhoods that expands only uncertain voxels and
    gives up on reaching a tentative voxel or the Manhattan search border.
    """
    if not d_search > 0:
        raise InvalidInputError("d_search must be > 0")
    s = grid.spec
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise InvalidInputError("cluster must be nonempty")
    idx, inside = s.indices_of(pts)
    if not inside.all():
        return False
    starts = np.unique(idx, axis=0)
    d_vox = int(math.floor(d_search / s.voxel_size + 1e-9))
    return bool(kernels.flood_fill_floating(
        grid.flat_values, s.dims_array, np.ascontiguousarray(starts, dtype=np.int64),
        grid.params.G_tent, grid.params.G_unc, d_vox,
    ))


def classify_cluster(points: np.ndarray, grid: OccupancyGrid, params: DetectorParams = DetectorParams()
                     ) -> ClusterLabel:
    """Rules A, B, C in order."""
    if first_near_point(points, grid, params.d_close, _near_threshold(grid, params)) >= 0:
        return ClusterLabel.BACKGROUND
    if is_floating(points, grid, params.d_search):
        return ClusterLabel.FLYING_OBJECT
    return ClusterLabel.UNKNOWN


@dataclass
class ScanClassification:
    """Voxel updates and detections produced from one scan.

    Voxel sets are flat grid indices; bg/unk weights are in-voxel point counts,
    detected-object voxels carry an infinite weight.
    """

    bg_voxels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    bg_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    det_voxels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    unk_voxels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    unk_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    detections: list[Detection] = field(default_factory=list)
    point_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    clusters: list[Cluster] = field(default_factory=list)
    n_out_of_grid: int = 0
    n_voxel_conflicts: int = 0

    @property
    def det_weights(self) -> np.ndarray:
        return np.full(self.det_voxels.shape, math.inf)

    def point_voxels(self) -> np.ndarray:
        return np.concatenate([self.bg_voxels, self.det_voxels, self.unk_voxels])

    def coefficients_and_weights(self, grid: OccupancyGrid):
        """``(flat, g, n)`` arrays ready for :meth:`OccupancyGrid.apply_flat`."""
        p = grid.params
        flat = self.point_voxels()
        g = np.concatenate([np.full(self.bg_voxels.size, p.g_occ), np.full(self.det_voxels.size, p.g_unk),
                            np.full(self.unk_voxels.size, p.g_unk)])
        n = np.concatenate([self.bg_weights, self.det_weights, self.unk_weights])
        return flat, g, n


def process_scan(points: np.ndarray, grid: OccupancyGrid, params: DetectorParams = DetectorParams(),
                 timestamp: float = 0.0) -> ScanClassification:
    """Cluster world-frame points, classify every cluster and assemble the map updates.

    Points outside the grid are dropped (and counted). When one voxel holds
    points of several classes, detected-object wins over background, which wins
    over unknown, so every voxel gets a single coefficient.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    spec = grid.spec
    idx, inside = spec.indices_of(pts)
    n_out = int((~inside).sum())
    pts, idx = pts[inside], idx[inside]
    out = ScanClassification(n_out_of_grid=n_out)
    if pts.shape[0] == 0:
        return out

    labels = cluster_labels(pts, params.d_cluster)
    point_cls = np.empty(pts.shape[0], dtype=np.int8)
    for members in _groups(labels):
        cpts = pts[members]
        if members.size < params.min_cluster_size:
            label = ClusterLabel.UNKNOWN
        else:
            label = classify_cluster(cpts, grid, params)
        point_cls[members] = label
        out.clusters.append(Cluster(cpts, label))
        if label == ClusterLabel.FLYING_OBJECT:
            out.detections.append(Detection(cpts.mean(axis=0), int(members.size), float(timestamp)))
    out.point_labels = point_cls

    flat = spec.flat(idx)
    det_v = np.unique(flat[point_cls == ClusterLabel.FLYING_OBJECT])
    bg_v, bg_n = np.unique(flat[point_cls == ClusterLabel.BACKGROUND], return_counts=True)
    unk_v, unk_n = np.unique(flat[point_cls == ClusterLabel.UNKNOWN], return_counts=True)

    keep_bg = ~np.isin(bg_v, det_v)
    claimed = np.concatenate([det_v, bg_v[keep_bg]])
    keep_unk = ~np.isin(unk_v, claimed)
    out.n_voxel_conflicts = int((~keep_bg).sum() + (~keep_unk).sum())

    out.det_voxels = det_v
    out.bg_voxels, out.bg_weights = bg_v[keep_bg], bg_n[keep_bg].astype(np.float64)
    out.unk_voxels, out.unk_weights = unk_v[keep_unk], unk_n[keep_unk].astype(np.float64)
    return out


# -- detection records --------------------------------------------------------

DETECTION_FIELDS = ["timestamp", "x", "y", "z", "point_count"]


def write_detections_csv(detections, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DETECTION_FIELDS)
        w.writeheader()
        for d in detections:
            w.writerow(d.record())


def write_detections_jsonl(detections, path) -> None:
    with open(path, "w") as fh:
        for d in detections:
            fh.write(json.dumps(d.record()) + "\n")


def _from_record(r: dict) -> Detection:
    return Detection(np.array([float(r["x"]), float(r["y"]), float(r["z"])]),
                     int(r["point_count"]), float(r["timestamp"]))


def read_detections(path) -> list[Detection]:
    """Read either format (chosen by suffix: ``.csv`` or JSON lines otherwise)."""
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            return [_from_record(r) for r in csv.DictReader(fh)]
    with open(path) as fh:
        return [_from_record(json.loads(line)) for line in fh if line.strip()]

"""Ray segments from organized scans and their voxel intersection lengths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .core import GridSpec, OrganizedScan, VoxelIndex

#: Segments shorter than this are not traversed.
MIN_SEGMENT = 1e-9


@dataclass(frozen=True)
class RaySegment:
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        return (self.end - self.start) / self.length


@dataclass(frozen=True)
class RayBatch:
    """Segments as arrays: ``starts`` and ``ends`` are ``(n, 3)``."""

    starts: np.ndarray
    ends: np.ndarray

    def __len__(self) -> int:
        return self.starts.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.ends - self.starts, axis=1)

    def __iter__(self):
        for s, e in zip(self.starts, self.ends):
            yield RaySegment(s, e)


def build_rays(scan: OrganizedScan, d_max: float) -> RayBatch:
    """One segment per unmasked element, from the sensor center.

    Empty elements run the full ``d_max``; returns stop at the hit or at ``d_max``.
    Segments are ordered column by column: neighbouring elevations of one
    azimuth cross neighbouring voxels, which keeps accumulation cache friendly.
    """
    if not d_max > 0:
        raise ValueError("d_max must be > 0")
    dirs = scan.directions.transpose(1, 0, 2).reshape(-1, 3)
    empty = scan.empty.T.ravel()
    ranges = scan.ranges.T.ravel()
    if scan.mask.any():
        keep = ~scan.mask.T.ravel()
        dirs, empty, ranges = dirs[keep], empty[keep], ranges[keep]
    dirs = dirs @ scan.pose.rotation.T
    lengths = np.where(empty, d_max, np.minimum(d_max, ranges))
    c = scan.pose.translation
    starts = np.broadcast_to(c, dirs.shape).copy()
    ends = c + lengths[:, None] * dirs
    return RayBatch(starts, ends)


def traverse(seg: RaySegment, grid: GridSpec) -> list[tuple[VoxelIndex, float]]:
    """Voxels the segment passes through, in order, with the length inside each."""
    idx, lengths = kernels.traverse_segment(
        np.ascontiguousarray(seg.start, np.float64), np.ascontiguousarray(seg.end, np.float64),
        grid.origin_array, grid.voxel_size, grid.dims_array,
    )
    return [(tuple(int(c) for c in v), float(l)) for v, l in zip(idx, lengths)]


class IntersectionSet:
    """Accumulated intersection length per voxel, stored densely."""

    def __init__(self, spec: GridSpec, weights: np.ndarray | None = None):
        self.spec = spec
        self.weights = np.zeros(spec.size) if weights is None else weights

    def flat_support(self) -> np.ndarray:
        return np.flatnonzero(self.weights)

    def as_dict(self) -> dict[VoxelIndex, float]:
        flat = self.flat_support()
        return {tuple(int(c) for c in v): float(w)
                for v, w in zip(self.spec.unflat(flat), self.weights[flat])}

    def __getitem__(self, v: VoxelIndex) -> float:
        return float(self.weights[self.spec.flat(np.array(v))[0]])

    def __len__(self) -> int:
        return int(np.count_nonzero(self.weights))


def accumulate(segments, grid: GridSpec, out: IntersectionSet | None = None) -> IntersectionSet:
    """Sum per-voxel intersection lengths over all segments (into ``out`` if given)."""
    if not isinstance(segments, RayBatch):
        segs = list(segments)
        if segs:
            segments = RayBatch(np.array([s.start for s in segs]), np.array([s.end for s in segs]))
        else:
            segments = RayBatch(np.zeros((0, 3)), np.zeros((0, 3)))
    if out is None:
        out = IntersectionSet(grid)
    kernels.raycast_accumulate(
        np.ascontiguousarray(segments.starts, np.float64), np.ascontiguousarray(segments.ends, np.float64),
        grid.origin_array, grid.voxel_size, grid.dims_array, out.weights,
    )
    return out


def write_weights_csv(inter: IntersectionSet, path) -> None:
    """Debug dump of ``i,j,k,weight`` triplets."""
    flat = inter.flat_support()
    idx = inter.spec.unflat(flat)
    with open(path, "w") as fh:
        fh.write("i,j,k,weight\n")
        for (i, j, k), w in zip(idx.tolist(), inter.weights[flat].tolist()):
            fh.write(f"{i},{j},{k},{w!r}\n")

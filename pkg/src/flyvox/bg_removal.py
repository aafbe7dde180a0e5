"""Reset small occupied voxel clusters detached from confidently occupied mass.

Targets that take off leave tentative/confident voxels that stay near their
own points; clusters of occupied voxels with too few confident members are
pushed back towards free with one ``g_free`` update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .detector import cluster_labels, _groups
from .voxel_grid import OccupancyGrid


@dataclass(frozen=True)
class VoxelCluster:
    voxels: np.ndarray  # (k, 3) voxel indices
    n_conf: int


def default_d_sep(voxel_size: float) -> float:
    """One voxel diagonal: components are 26-connected."""
    return math.sqrt(3.0) * voxel_size


def cluster_occupied(grid: OccupancyGrid, d_sep: float | None = None) -> list[VoxelCluster]:
    """Euclidean clusters (center distance <= d_sep) of voxels with G >= G_tent."""
    s = grid.spec
    d_sep = default_d_sep(s.voxel_size) if d_sep is None else d_sep
    if not d_sep > 0:
        raise ValueError("d_sep must be > 0")
    occ_full = grid.values >= grid.params.G_tent
    # work on the bounding box of the occupied voxels
    lo = np.zeros(3, np.int64)
    box = []
    for ax in range(3):
        nz = np.flatnonzero(occ_full.any(axis=tuple(a for a in range(3) if a != ax)))
        if nz.size == 0:
            return []
        lo[ax] = nz[0]
        box.append(slice(nz[0], nz[-1] + 1))
    box = tuple(box)
    occ = occ_full[box]
    conf = grid.values[box] >= grid.params.G_conf
    ratio = d_sep / s.voxel_size
    eps = 1e-9
    if ratio < 1.0 - eps:
        connectivity = 0
    elif ratio < math.sqrt(2.0) - eps:
        connectivity = 1
    elif ratio < math.sqrt(3.0) - eps:
        connectivity = 2
    elif ratio < 2.0 - eps:
        connectivity = 3
    else:
        connectivity = None

    if connectivity is not None:
        # center distances are multiples of the pitch, so small radii are lattice connectivities
        if connectivity == 0:
            labels = np.zeros(occ.shape, np.int64)
            labels[occ] = np.arange(1, int(occ.sum()) + 1)
            nlab = int(occ.sum())
        else:
            labels, nlab = ndimage.label(occ, structure=ndimage.generate_binary_structure(3, connectivity))
        if nlab == 0:
            return []
        idx = np.argwhere(occ) + lo
        lab = labels[occ] - 1
    else:
        idx = np.argwhere(occ) + lo
        lab = cluster_labels(idx.astype(np.float64), ratio * (1.0 + eps))
    conf_flags = conf[occ]
    return [VoxelCluster(idx[m], int(conf_flags[m].sum())) for m in _groups(np.asarray(lab))]


def select_separated(clusters: list[VoxelCluster], n_conf_min: int) -> np.ndarray:
    """All voxels of clusters with fewer than ``n_conf_min`` confident voxels, as ``(k, 3)``."""
    if n_conf_min < 0:
        raise ValueError("n_conf_min must be >= 0")
    picked = [c.voxels for c in clusters if c.n_conf < n_conf_min]
    if not picked:
        return np.zeros((0, 3), np.int64)
    return np.concatenate(picked)


def separated_voxels(grid: OccupancyGrid, n_conf_min: int = 24, d_sep: float | None = None) -> np.ndarray:
    """Flat indices to update with ``g_free`` and weight 1."""
    sel = select_separated(cluster_occupied(grid, d_sep), n_conf_min)
    return grid.spec.flat(sel)

import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flyvox.bg_removal import VoxelCluster, cluster_occupied, select_separated, separated_voxels
from flyvox.core import GridSpec
from flyvox.voxel_grid import OccupancyGrid, OccupancyParams

P = OccupancyParams()
SPEC = GridSpec((-1.0, 0.0, 2.0), 0.25, (10, 9, 8))


def oracle(grid, d_sep, n_conf_min):
    """Brute-force components over center distances, then the confident-count filter."""
    idx = np.argwhere(grid.values >= P.G_tent)
    conf = grid.values[tuple(idx.T)] >= P.G_conf
    c = (idx + 0.5) * grid.spec.voxel_size
    adj = np.linalg.norm(c[:, None] - c[None], axis=-1) <= d_sep + 1e-9
    lab = -np.ones(len(idx), int)
    out = set()
    for s in range(len(idx)):
        if lab[s] >= 0:
            continue
        lab[s] = s
        comp, q = [s], deque([s])
        while q:
            i = q.popleft()
            for j in np.flatnonzero(adj[i] & (lab < 0)):
                lab[j] = s
                comp.append(j)
                q.append(j)
        if conf[comp].sum() < n_conf_min:
            out |= {tuple(idx[k]) for k in comp}
    return out


def _grid(rng, p_occ):
    g = OccupancyGrid(SPEC)
    g.values[:] = rng.choice([P.g_free, P.g_unk, -200.0, 0.0], size=g.values.shape,
                             p=[0.6, 0.4 - p_occ, p_occ / 2, p_occ / 2])
    return g


@pytest.mark.parametrize("d_vox", [0.5, 1.0, 1.2, math.sqrt(2), math.sqrt(3), 1.9, 2.5])
def test_matches_brute_force(rng, d_vox):
    for _ in range(15):
        g = _grid(rng, float(rng.uniform(0.02, 0.15)))
        n_min = int(rng.integers(0, 6))
        got = {tuple(v) for v in g.spec.unflat(separated_voxels(g, n_min, d_vox * SPEC.voxel_size)).tolist()}
        assert got == oracle(g, d_vox * SPEC.voxel_size, n_min)


def test_empty_map_and_large_mass():
    g = OccupancyGrid(SPEC)
    assert cluster_occupied(g) == []
    g.values[:, :, 0] = 0.0  # ground slab: 90 confident voxels
    g.values[4, 4, 5] = -200.0  # floating tentative voxel
    sel = separated_voxels(g, n_conf_min=24)
    assert g.spec.unflat(sel).tolist() == [[4, 4, 5]]
    cl = cluster_occupied(g)
    assert sorted(c.n_conf for c in cl) == [0, 90]


clusters = st.lists(st.tuples(st.integers(1, 5), st.integers(0, 5)), max_size=8).map(
    lambda cs: [VoxelCluster(np.full((k, 3), i), min(c, k)) for i, (k, c) in enumerate(cs)])


@given(clusters, st.integers(0, 6))
def test_selection_takes_whole_clusters_below_threshold(cs, n_min):
    sel = select_separated(cs, n_min)
    assert sel.shape == (sum(len(c.voxels) for c in cs if c.n_conf < n_min), 3)
    picked = {int(v) for v in sel[:, 0]}
    assert picked == {i for i, c in enumerate(cs) if c.n_conf < n_min}
    # raising the threshold never unselects
    assert len(select_separated(cs, n_min + 1)) >= len(sel)


def test_validation():
    with pytest.raises(ValueError):
        select_separated([], -1)
    with pytest.raises(ValueError):
        cluster_occupied(OccupancyGrid(SPEC), 0.0)

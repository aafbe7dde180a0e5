"""Pure-Python twin of ``_kernels.pyx``.

Same signatures and the same arithmetic in the same order, so both backends
agree to the last bit on the traversal lengths. Used when the compiled
extension is missing or ``FLYVOX_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

NAME = "python"

MIN_SEGMENT = 1e-9


def _clip(s, u, seg_len, lo, hi):
    a, b = 0.0, seg_len
    for ax in range(3):
        if u[ax] == 0.0:
            if s[ax] < lo[ax] or s[ax] >= hi[ax]:
                return None
        else:
            ta = (lo[ax] - s[ax]) / u[ax]
            tb = (hi[ax] - s[ax]) / u[ax]
            if ta > tb:
                ta, tb = tb, ta
            a = max(a, ta)
            b = min(b, tb)
    if b <= a:
        return None
    return a, b


def _tmax(o, idx, step, vs, s, u):
    if step > 0:
        return (o + (idx + 1) * vs - s) / u
    if step < 0:
        return (o + idx * vs - s) / u
    return math.inf


def _walk(s, e, org, vs, dims, emit):
    dx, dy, dz = e[0] - s[0], e[1] - s[1], e[2] - s[2]
    seg_len = math.sqrt(dx * dx + dy * dy + dz * dz)
    if seg_len < MIN_SEGMENT:
        return
    u = [(e[ax] - s[ax]) / seg_len for ax in range(3)]
    lo = [org[ax] for ax in range(3)]
    hi = [org[ax] + dims[ax] * vs for ax in range(3)]
    clipped = _clip(s, u, seg_len, lo, hi)
    if clipped is None:
        return
    t0, t1 = clipped

    idx = [0, 0, 0]
    step = [0, 0, 0]
    tm = [0.0, 0.0, 0.0]
    td = [math.inf, math.inf, math.inf]
    for ax in range(3):
        p = s[ax] + t0 * u[ax]
        idx[ax] = min(max(math.floor((p - org[ax]) / vs), 0), dims[ax] - 1)
        step[ax] = 1 if u[ax] > 0.0 else (-1 if u[ax] < 0.0 else 0)
        tm[ax] = _tmax(org[ax], idx[ax], step[ax], vs, s[ax], u[ax])
        if step[ax] != 0:
            td[ax] = vs / abs(u[ax])

    t = t0
    while True:
        tn, axis = t1, -1
        for ax in range(3):
            if tm[ax] < tn:
                tn, axis = tm[ax], ax
        length = tn - t
        if length > 0.0:
            emit(idx[0], idx[1], idx[2], length)
        if axis < 0:
            break
        t = tn
        idx[axis] += step[axis]
        if idx[axis] < 0 or idx[axis] >= dims[axis]:
            break
        tm[axis] += td[axis]


def traverse_segment(start, end, origin, voxel_size, dims):
    """Voxels crossed by one segment, in order, with the in-voxel lengths."""
    cells, lengths = [], []

    def emit(i, j, k, length):
        cells.append((i, j, k))
        lengths.append(length)

    _walk([float(x) for x in start], [float(x) for x in end], [float(x) for x in origin],
          float(voxel_size), [int(d) for d in dims], emit)
    return (np.array(cells, dtype=np.int64).reshape(-1, 3),
            np.array(lengths, dtype=np.float64))


def raycast_accumulate(starts, ends, origin, voxel_size, dims, out):
    """Add every segment's per-voxel length into the flat accumulator ``out``."""
    org = [float(x) for x in origin]
    dims = [int(d) for d in dims]
    ny, nz = dims[1], dims[2]

    def emit(i, j, k, length):
        out[(i * ny + j) * nz + k] += length

    for s, e in zip(starts.tolist(), ends.tolist()):
        _walk(s, e, org, float(voxel_size), dims, emit)


_NEIGHBORS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def flood_fill_floating(values, dims, starts, g_tent, g_unc, d_search):
    """BFS over uncertain voxels from each start; False on reaching occupancy or the search border."""
    nx, ny, nz = (int(d) for d in dims)
    for x0, y0, z0 in np.asarray(starts).tolist():
        if not (0 <= x0 < nx and 0 <= y0 < ny and 0 <= z0 < nz):
            return False
        seen = {(x0, y0, z0)}
        queue = deque([(x0, y0, z0)])
        while queue:
            x, y, z = queue.popleft()
            g = values[(x * ny + y) * nz + z]
            if g >= g_tent:
                return False
            if g >= g_unc:
                if abs(x - x0) + abs(y - y0) + abs(z - z0) >= d_search:
                    return False
                for dx, dy, dz in _NEIGHBORS:
                    n = (x + dx, y + dy, z + dz)
                    if not (0 <= n[0] < nx and 0 <= n[1] < ny and 0 <= n[2] < nz):
                        continue
                    if n in seen:
                        continue
                    seen.add(n)
                    queue.append(n)
    return True


def first_near_occupied(points, values, origin, voxel_size, dims, threshold, radius, inclusive):
    """Index of the first point with a voxel >= threshold within ``radius``, else -1."""
    h = math.ceil(radius / voxel_size)
    r2 = radius * radius
    nx, ny, nz = (int(d) for d in dims)
    ox, oy, oz = (float(o) for o in origin)
    for p, (px, py, pz) in enumerate(np.asarray(points).tolist()):
        vi = math.floor((px - ox) / voxel_size)
        vj = math.floor((py - oy) / voxel_size)
        vk = math.floor((pz - oz) / voxel_size)
        for i in range(max(vi - h, 0), min(vi + h, nx - 1) + 1):
            cx = ox + (i + 0.5) * voxel_size - px
            for j in range(max(vj - h, 0), min(vj + h, ny - 1) + 1):
                cy = oy + (j + 0.5) * voxel_size - py
                for k in range(max(vk - h, 0), min(vk + h, nz - 1) + 1):
                    if values[(i * ny + j) * nz + k] < threshold:
                        continue
                    cz = oz + (k + 0.5) * voxel_size - pz
                    d2 = cx * cx + cy * cy + cz * cz
                    if d2 < r2 or (inclusive and d2 == r2):
                        return p
    return -1


def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        parent[a], a = root, parent[a]
    return root


def union_cell_pairs(points, cell_start, cell_end, pair_a, pair_b, d2):
    """Union-find over cells; a candidate cell pair merges if any point pair is within sqrt(d2).

    Returns the root cell of every cell.
    """
    pts = np.asarray(points).tolist()
    parent = list(range(len(cell_start)))
    for a, b in zip(np.asarray(pair_a).tolist(), np.asarray(pair_b).tolist()):
        ra, rb = _find(parent, a), _find(parent, b)
        if ra == rb:
            continue
        linked = False
        for i in range(cell_start[a], cell_end[a]):
            pi = pts[i]
            for j in range(cell_start[b], cell_end[b]):
                pj = pts[j]
                dx, dy, dz = pi[0] - pj[0], pi[1] - pj[1], pi[2] - pj[2]
                if dx * dx + dy * dy + dz * dz <= d2:
                    linked = True
                    break
            if linked:
                break
        if linked:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    return np.array([_find(parent, q) for q in range(len(parent))], dtype=np.int64)


def apply_free_weights(values, weights, skip, g):
    """In place: ``G <- 2^-w G + (1 - 2^-w) g`` wherever ``w != 0`` and not ``skip``.

    Pinned (infinite) values are left alone. Returns the number of voxels updated.
    """
    idx = np.flatnonzero((weights != 0) & ~skip.view(bool))
    w = weights[idx]
    G = values[idx]
    # scalar libm pow, matching the compiled kernel bit for bit
    f = np.array([math.pow(2.0, -x) for x in w.tolist()], dtype=np.float64)
    with np.errstate(invalid="ignore"):
        new = np.where(np.isinf(w), g, f * G + (1.0 - f) * g)
    values[idx] = np.where(np.isinf(G), G, new)
    return int(idx.size)


def union_neighbor_cells(points, keys, cell_start, cell_end, lo_off, hi_off, d2):
    """Union-find over cells with sorted distinct ``keys``.

    Cell b is a candidate for cell a when ``keys[a] + lo_off[c] <= keys[b] <= keys[a] + hi_off[c]``
    for some window c; candidates merge if any point pair is within sqrt(d2).
    Returns the root (smallest member) cell of every cell.
    """
    keys = np.asarray(keys)
    m = keys.size
    pa, pb = [], []
    for lo, hi in zip(np.asarray(lo_off).tolist(), np.asarray(hi_off).tolist()):
        pos = np.searchsorted(keys, keys + lo)
        for j in range(hi - lo + 1):
            q = pos + j
            ok = q < m
            q = np.where(ok, q, m - 1)
            hit = ok & (keys[q] <= keys + hi)
            pa.append(np.flatnonzero(hit))
            pb.append(q[hit])
    pair_a = np.concatenate(pa).astype(np.int64) if pa else np.zeros(0, np.int64)
    pair_b = np.concatenate(pb).astype(np.int64) if pb else np.zeros(0, np.int64)
    return union_cell_pairs(points, cell_start, cell_end, pair_a, pair_b, d2)

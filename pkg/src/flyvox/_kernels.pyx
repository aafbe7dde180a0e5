# cython: language_level=3
"""Compiled inner loops: voxel traversal, flood fill, cube search, union-find.

Every function here has a line-for-line twin in ``_kernels_py`` with the same
signature; ``flyvox._backend`` picks one at import time.

Grids are passed as flat C-order float64 arrays of shape (nx, ny, nz), so the
voxel (i, j, k) lives at ``(i * ny + j) * nz + k``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt, fabs, pow, isinf, INFINITY
from libc.stdlib cimport malloc, free
from libc.string cimport memset

cnp.import_array()

NAME = "cython"

ctypedef long long i64

cdef double MIN_SEGMENT = 1e-9


cdef inline bint _clip(const double* s, const double* u, double seg_len,
                       const double* lo, const double* hi,
                       double* t0, double* t1) noexcept nogil:
    cdef double a = 0.0, b = seg_len, ta, tb, tmp
    cdef int ax
    for ax in range(3):
        if u[ax] == 0.0:
            if s[ax] < lo[ax] or s[ax] >= hi[ax]:
                return False
        else:
            ta = (lo[ax] - s[ax]) / u[ax]
            tb = (hi[ax] - s[ax]) / u[ax]
            if ta > tb:
                tmp = ta
                ta = tb
                tb = tmp
            if ta > a:
                a = ta
            if tb < b:
                b = tb
    if b <= a:
        return False
    t0[0] = a
    t1[0] = b
    return True


cdef inline double _tmax(double o, i64 idx, int step, double vs, double s, double u) noexcept nogil:
    if step > 0:
        return (o + (idx + 1) * vs - s) / u
    elif step < 0:
        return (o + idx * vs - s) / u
    return INFINITY


cdef Py_ssize_t _walk(const double* s, const double* e, const double* org, double vs,
                      const i64* dims, double* acc, i64* out_idx, double* out_len) noexcept nogil:
    """Amanatides-Woo walk of segment s->e; accumulate into acc or append to out_*."""
    cdef double u[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double tm[3]
    cdef double td[3]
    cdef i64 idx[3]
    cdef int step[3]
    cdef double seg_len, t0, t1, t, tn, l, p, dx, dy, dz
    cdef int ax, axis
    cdef Py_ssize_t n = 0

    dx = e[0] - s[0]
    dy = e[1] - s[1]
    dz = e[2] - s[2]
    seg_len = sqrt(dx * dx + dy * dy + dz * dz)
    if seg_len < MIN_SEGMENT:
        return 0
    for ax in range(3):
        u[ax] = (e[ax] - s[ax]) / seg_len
        lo[ax] = org[ax]
        hi[ax] = org[ax] + dims[ax] * vs
    if not _clip(s, u, seg_len, lo, hi, &t0, &t1):
        return 0

    for ax in range(3):
        p = s[ax] + t0 * u[ax]
        idx[ax] = <i64>floor((p - org[ax]) / vs)
        if idx[ax] < 0:
            idx[ax] = 0
        elif idx[ax] >= dims[ax]:
            idx[ax] = dims[ax] - 1
        step[ax] = 1 if u[ax] > 0.0 else (-1 if u[ax] < 0.0 else 0)
        tm[ax] = _tmax(org[ax], idx[ax], step[ax], vs, s[ax], u[ax])
        td[ax] = vs / fabs(u[ax]) if step[ax] != 0 else INFINITY

    t = t0
    while True:
        tn = t1
        axis = -1
        if tm[0] < tn:
            tn = tm[0]
            axis = 0
        if tm[1] < tn:
            tn = tm[1]
            axis = 1
        if tm[2] < tn:
            tn = tm[2]
            axis = 2
        l = tn - t
        if l > 0.0:
            if acc != NULL:
                acc[(idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]] += l
            else:
                out_idx[3 * n] = idx[0]
                out_idx[3 * n + 1] = idx[1]
                out_idx[3 * n + 2] = idx[2]
                out_len[n] = l
                n += 1
        if axis < 0:
            break
        t = tn
        idx[axis] += step[axis]
        if idx[axis] < 0 or idx[axis] >= dims[axis]:
            break
        tm[axis] += td[axis]
    return n


cdef void _walk_acc(const double* s, const double* e, const double* org, double vs,
                    const i64* dims, double* acc) noexcept nogil:
    """``_walk`` specialised for accumulation, tracking the flat index incrementally."""
    cdef double u[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double tm[3]
    cdef double td[3]
    cdef i64 idx[3]
    cdef i64 stride[3]
    cdef int step[3]
    cdef double seg_len, t0, t1, t, tn, l, p, dx, dy, dz
    cdef int ax, axis
    cdef i64 flat = 0

    dx = e[0] - s[0]
    dy = e[1] - s[1]
    dz = e[2] - s[2]
    seg_len = sqrt(dx * dx + dy * dy + dz * dz)
    if seg_len < MIN_SEGMENT:
        return
    for ax in range(3):
        u[ax] = (e[ax] - s[ax]) / seg_len
        lo[ax] = org[ax]
        hi[ax] = org[ax] + dims[ax] * vs
    if not _clip(s, u, seg_len, lo, hi, &t0, &t1):
        return
    stride[0] = dims[1] * dims[2]
    stride[1] = dims[2]
    stride[2] = 1

    for ax in range(3):
        p = s[ax] + t0 * u[ax]
        idx[ax] = <i64>floor((p - org[ax]) / vs)
        if idx[ax] < 0:
            idx[ax] = 0
        elif idx[ax] >= dims[ax]:
            idx[ax] = dims[ax] - 1
        step[ax] = 1 if u[ax] > 0.0 else (-1 if u[ax] < 0.0 else 0)
        tm[ax] = _tmax(org[ax], idx[ax], step[ax], vs, s[ax], u[ax])
        td[ax] = vs / fabs(u[ax]) if step[ax] != 0 else INFINITY
        flat += idx[ax] * stride[ax]

    t = t0
    while True:
        tn = t1
        axis = -1
        if tm[0] < tn:
            tn = tm[0]
            axis = 0
        if tm[1] < tn:
            tn = tm[1]
            axis = 1
        if tm[2] < tn:
            tn = tm[2]
            axis = 2
        l = tn - t
        if l > 0.0:
            acc[flat] += l
        if axis < 0:
            return
        t = tn
        idx[axis] += step[axis]
        if idx[axis] < 0 or idx[axis] >= dims[axis]:
            return
        flat += step[axis] * stride[axis]
        tm[axis] += td[axis]


def traverse_segment(const double[::1] start, const double[::1] end, const double[::1] origin,
                     double voxel_size, const i64[::1] dims):
    """Voxels crossed by one segment, in order, with the in-voxel lengths."""
    cdef Py_ssize_t cap = dims[0] + dims[1] + dims[2] + 4
    out_idx = np.empty((cap, 3), dtype=np.int64)
    out_len = np.empty(cap, dtype=np.float64)
    cdef i64[:, ::1] oi = out_idx
    cdef double[::1] ol = out_len
    cdef Py_ssize_t n
    with nogil:
        n = _walk(&start[0], &end[0], &origin[0], voxel_size, &dims[0], NULL, &oi[0, 0], &ol[0])
    return out_idx[:n], out_len[:n]


def raycast_accumulate(const double[:, ::1] starts, const double[:, ::1] ends,
                       const double[::1] origin, double voxel_size, const i64[::1] dims,
                       double[::1] out):
    """Add every segment's per-voxel length into the flat accumulator ``out``."""
    cdef Py_ssize_t i, n = starts.shape[0]
    if n == 0:
        return
    with nogil:
        for i in range(n):
            _walk_acc(&starts[i, 0], &ends[i, 0], &origin[0], voxel_size, &dims[0], &out[0])


def flood_fill_floating(const double[::1] values, const i64[::1] dims, const i64[:, ::1] starts,
                        double g_tent, double g_unc, i64 d_search):
    """BFS over uncertain voxels from each start; False on reaching occupancy or the search border."""
    cdef i64 h = d_search if d_search > 0 else 0
    cdef i64 side = 2 * h + 1
    cdef i64 vol = side * side * side
    cdef unsigned char* seen = <unsigned char*>malloc(vol)
    cdef i64* queue = <i64*>malloc(3 * vol * sizeof(i64))
    cdef i64 nx = dims[0], ny = dims[1], nz = dims[2]
    cdef Py_ssize_t si, head, tail, q
    cdef i64 x0, y0, z0, x, y, z, xn, yn, zn, loc, man
    cdef int k
    cdef double g
    cdef bint floating = True
    cdef i64 off[18]
    off[:] = [1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1]
    if seen == NULL or queue == NULL:
        free(seen)
        free(queue)
        raise MemoryError()
    with nogil:
        for si in range(starts.shape[0]):
            x0 = starts[si, 0]
            y0 = starts[si, 1]
            z0 = starts[si, 2]
            if x0 < 0 or y0 < 0 or z0 < 0 or x0 >= nx or y0 >= ny or z0 >= nz:
                floating = False
                break
            memset(seen, 0, vol)
            seen[(h * side + h) * side + h] = 1
            queue[0] = x0
            queue[1] = y0
            queue[2] = z0
            head = 0
            tail = 1
            while head < tail:
                x = queue[3 * head]
                y = queue[3 * head + 1]
                z = queue[3 * head + 2]
                head += 1
                g = values[(x * ny + y) * nz + z]
                if g >= g_tent:
                    floating = False
                    break
                if g >= g_unc:
                    man = (x - x0 if x >= x0 else x0 - x) + (y - y0 if y >= y0 else y0 - y) \
                        + (z - z0 if z >= z0 else z0 - z)
                    if man >= d_search:
                        floating = False
                        break
                    for k in range(6):
                        xn = x + off[3 * k]
                        yn = y + off[3 * k + 1]
                        zn = z + off[3 * k + 2]
                        if xn < 0 or yn < 0 or zn < 0 or xn >= nx or yn >= ny or zn >= nz:
                            continue
                        loc = ((xn - x0 + h) * side + (yn - y0 + h)) * side + (zn - z0 + h)
                        if seen[loc]:
                            continue
                        seen[loc] = 1
                        queue[3 * tail] = xn
                        queue[3 * tail + 1] = yn
                        queue[3 * tail + 2] = zn
                        tail += 1
            if not floating:
                break
    free(seen)
    free(queue)
    return bool(floating)


def first_near_occupied(const double[:, ::1] points, const double[::1] values,
                        const double[::1] origin, double voxel_size, const i64[::1] dims,
                        double threshold, double radius, bint inclusive):
    """Index of the first point with a voxel >= threshold within ``radius``, else -1."""
    cdef i64 h = <i64>ceil(radius / voxel_size)
    cdef double r2 = radius * radius
    cdef i64 nx = dims[0], ny = dims[1], nz = dims[2]
    cdef Py_ssize_t p, found = -1
    cdef i64 vi, vj, vk, i, j, k, i0, i1, j0, j1, k0, k1
    cdef double px, py, pz, cx, cy, cz, d2
    with nogil:
        for p in range(points.shape[0]):
            px = points[p, 0]
            py = points[p, 1]
            pz = points[p, 2]
            vi = <i64>floor((px - origin[0]) / voxel_size)
            vj = <i64>floor((py - origin[1]) / voxel_size)
            vk = <i64>floor((pz - origin[2]) / voxel_size)
            i0 = vi - h if vi - h > 0 else 0
            j0 = vj - h if vj - h > 0 else 0
            k0 = vk - h if vk - h > 0 else 0
            i1 = vi + h if vi + h < nx - 1 else nx - 1
            j1 = vj + h if vj + h < ny - 1 else ny - 1
            k1 = vk + h if vk + h < nz - 1 else nz - 1
            for i in range(i0, i1 + 1):
                cx = origin[0] + (i + 0.5) * voxel_size - px
                for j in range(j0, j1 + 1):
                    cy = origin[1] + (j + 0.5) * voxel_size - py
                    for k in range(k0, k1 + 1):
                        if values[(i * ny + j) * nz + k] < threshold:
                            continue
                        cz = origin[2] + (k + 0.5) * voxel_size - pz
                        d2 = cx * cx + cy * cy + cz * cz
                        if d2 < r2 or (inclusive and d2 == r2):
                            found = p
                            break
                    if found >= 0:
                        break
                if found >= 0:
                    break
            if found >= 0:
                break
    return found


cdef inline i64 _find(i64* parent, i64 a) noexcept nogil:
    cdef i64 r = a, nxt
    while parent[r] != r:
        r = parent[r]
    while parent[a] != r:
        nxt = parent[a]
        parent[a] = r
        a = nxt
    return r


def union_cell_pairs(const double[:, ::1] points, const i64[::1] cell_start, const i64[::1] cell_end,
                     const i64[::1] pair_a, const i64[::1] pair_b, double d2):
    """Union-find over cells; a candidate cell pair merges if any point pair is within sqrt(d2).

    Returns the root cell of every cell.
    """
    cdef Py_ssize_t nc = cell_start.shape[0]
    roots = np.arange(nc, dtype=np.int64)
    cdef i64[::1] parent = roots
    cdef Py_ssize_t q, i, j
    cdef i64 ra, rb, a, b
    cdef double dx, dy, dz
    cdef bint linked
    if nc == 0:
        return roots
    with nogil:
        for q in range(pair_a.shape[0]):
            a = pair_a[q]
            b = pair_b[q]
            ra = _find(&parent[0], a)
            rb = _find(&parent[0], b)
            if ra == rb:
                continue
            linked = False
            for i in range(cell_start[a], cell_end[a]):
                for j in range(cell_start[b], cell_end[b]):
                    dx = points[i, 0] - points[j, 0]
                    dy = points[i, 1] - points[j, 1]
                    dz = points[i, 2] - points[j, 2]
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
        for q in range(nc):
            parent[q] = _find(&parent[0], q)
    return roots


def apply_free_weights(double[::1] values, const double[::1] weights, const unsigned char[::1] skip,
                       double g):
    """In place: ``G <- 2^-w G + (1 - 2^-w) g`` wherever ``w != 0`` and not ``skip``.

    Pinned (infinite) values are left alone. Returns the number of voxels updated.
    """
    cdef Py_ssize_t i, n = values.shape[0], count = 0
    cdef double w, f, G
    with nogil:
        for i in range(n):
            w = weights[i]
            if w == 0.0 or skip[i]:
                continue
            count += 1
            G = values[i]
            if isinf(G):
                continue
            if isinf(w):
                values[i] = g
            else:
                f = pow(2.0, -w)
                values[i] = f * G + (1.0 - f) * g
    return count


cdef inline void _link(const double[:, ::1] points, const i64[::1] cell_start, const i64[::1] cell_end,
                       i64* parent, i64 a, i64 b, double d2) noexcept nogil:
    cdef i64 ra = _find(parent, a), rb = _find(parent, b)
    cdef Py_ssize_t i, j
    cdef double dx, dy, dz
    if ra == rb:
        return
    for i in range(cell_start[a], cell_end[a]):
        for j in range(cell_start[b], cell_end[b]):
            dx = points[i, 0] - points[j, 0]
            dy = points[i, 1] - points[j, 1]
            dz = points[i, 2] - points[j, 2]
            if dx * dx + dy * dy + dz * dz <= d2:
                if ra < rb:
                    parent[rb] = ra
                else:
                    parent[ra] = rb
                return


def union_neighbor_cells(const double[:, ::1] points, const i64[::1] keys, const i64[::1] cell_start,
                         const i64[::1] cell_end, const i64[::1] lo_off, const i64[::1] hi_off, double d2):
    """Union-find over cells with sorted distinct ``keys``.

    Cell b is a candidate for cell a when ``keys[a] + lo_off[c] <= keys[b] <= keys[a] + hi_off[c]``
    for some window c; candidates merge if any point pair is within sqrt(d2).
    Returns the root (smallest member) cell of every cell.
    """
    cdef Py_ssize_t nc = keys.shape[0], nw = lo_off.shape[0], a, c, q
    roots = np.arange(nc, dtype=np.int64)
    cdef i64[::1] parent = roots
    cdef i64* ptr
    cdef i64 lo, hi
    if nc == 0:
        return roots
    ptr = <i64*>malloc(nw * sizeof(i64))
    if ptr == NULL:
        raise MemoryError()
    with nogil:
        for c in range(nw):
            ptr[c] = 0
        # keys[a] + offset grows with a, so each window start only moves forward
        for a in range(nc):
            for c in range(nw):
                lo = keys[a] + lo_off[c]
                hi = keys[a] + hi_off[c]
                while ptr[c] < nc and keys[ptr[c]] < lo:
                    ptr[c] += 1
                q = ptr[c]
                while q < nc and keys[q] <= hi:
                    _link(points, cell_start, cell_end, &parent[0], a, q, d2)
                    q += 1
        for q in range(nc):
            parent[q] = _find(&parent[0], q)
    free(ptr)
    return roots

"""Compiled vs pure-Python kernels on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Prints the best-of-``repeat`` time per kernel and backend, the speed-up, and
whether the two backends returned identical results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from flyvox import _kernels_py

try:
    from flyvox import _kernels
except ImportError:  # pragma: no cover
    _kernels = None


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(scale: float, rng: np.random.Generator):
    dims = np.array([80, 80, 24], np.int64)
    origin = np.array([-10.0, -10.0, -1.0])
    vs = 0.25
    size = int(dims.prod())

    n_rays = max(1, int(4000 * scale))
    starts = np.tile([0.0, 0.0, 2.0], (n_rays, 1))
    d = rng.normal(size=(n_rays, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ends = starts + rng.uniform(1.0, 12.0, (n_rays, 1)) * d

    def raycast(k):
        out = np.zeros(size)
        k.raycast_accumulate(starts, ends, origin, vs, dims, out)
        return out

    values = rng.choice([-1000.0, -740.0, -500.0, -100.0], size=size, p=[0.6, 0.3, 0.07, 0.03])
    n_starts = max(1, int(300 * scale))
    fill_starts = np.column_stack([rng.integers(0, n, n_starts) for n in dims]).astype(np.int64)

    def flood(k):
        return [k.flood_fill_floating(values, dims, fill_starts[i:i + 1], -300.0, -750.0, 12)
                for i in range(n_starts)]

    n_pts = max(1, int(3000 * scale))
    pts = origin + rng.random((n_pts, 3)) * dims * vs

    def near(k):
        return [k.first_near_occupied(pts[i:i + 1], values, origin, vs, dims, -300.0, 0.7, False)
                for i in range(n_pts)]

    from flyvox.detector import _CELL_COLUMNS
    cpts = rng.random((max(2, int(20000 * scale)), 3)) * 6.0
    cell = 0.25 / np.sqrt(3.0) * (1 - 1e-9)
    c = np.floor(cpts / cell).astype(np.int64) + 2
    ext = c.max(axis=0) + 3
    keys = (c[:, 0] * ext[1] + c[:, 1]) * ext[2] + c[:, 2]
    order = np.argsort(keys, kind="stable")
    uniq, start = np.unique(keys[order], return_index=True)
    end = np.r_[start[1:], len(keys)].astype(np.int64)
    col = np.array([(a * ext[1] + b) * ext[2] for a, b, _, _ in _CELL_COLUMNS], np.int64)
    lo = col + np.array([w[2] for w in _CELL_COLUMNS])
    hi = col + np.array([w[3] for w in _CELL_COLUMNS])
    sorted_pts = np.ascontiguousarray(cpts[order])

    def union(k):
        return k.union_neighbor_cells(sorted_pts, uniq.astype(np.int64), start.astype(np.int64), end, lo, hi,
                                      0.0625)

    w = np.where(rng.random(size) < 0.3, rng.exponential(1.0, size), 0.0)
    skip = (rng.random(size) < 0.05).astype(np.uint8)

    def free_update(k):
        v = values.copy()
        k.apply_free_weights(v, w, skip, -1000.0)
        return v

    return [("raycast_accumulate", raycast, f"{n_rays} rays"),
            ("flood_fill_floating", flood, f"{n_starts} searches"),
            ("first_near_occupied", near, f"{n_pts} points"),
            ("union_neighbor_cells", union, f"{len(cpts)} points"),
            ("apply_free_weights", free_update, f"{size} voxels")]


def same(a, b) -> bool:
    if isinstance(a, list):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every problem size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; only the pure-Python backend is available")
    rows = []
    for name, fn, size in cases(args.scale, np.random.default_rng(args.seed)):
        t_py, out_py = _best(lambda: fn(_kernels_py), args.repeat)
        if _kernels is not None:
            t_cy, out_cy = _best(lambda: fn(_kernels), args.repeat)
            rows.append((name, size, t_cy, t_py, t_py / t_cy, same(out_cy, out_py)))
        else:
            rows.append((name, size, float("nan"), t_py, float("nan"), None))
    print(f"{'kernel':22s} {'size':>16s} {'cython [ms]':>12s} {'python [ms]':>12s} {'speed-up':>9s} identical")
    for name, size, t_cy, t_py, sp, eq in rows:
        print(f"{name:22s} {size:>16s} {t_cy * 1e3:12.2f} {t_py * 1e3:12.2f} {sp:9.1f} {eq}")
    return rows


if __name__ == "__main__":
    main()

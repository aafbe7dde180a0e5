"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the terminal summary (see conftest).
"""
import math
import os
import time
from collections import deque

import numpy as np
import pytest
from scipy import ndimage

from flyvox.core import GridSpec, Pose, SensorSpec
from flyvox.detector import extract_clusters, is_floating
from flyvox.raycaster import RaySegment, traverse
from flyvox.sim import flyby, run_scenario, single_voxel_trace, takeoff, timing_summary
from flyvox.sim.scenarios import updates_to_free_after_leaving
from flyvox.tracker import TrackerConfig, correct, predict
from flyvox.uncertainty import (box_probability, detection_probability,
                                intersection_probability_single, jacobian, measured_point)
from flyvox.voxel_grid import (LogOddsState, OccupancyGrid, OccupancyParams, VoxelState, step_value,
                               update_value)

P = OccupancyParams()


def Phi(x):
    return 0.5 * (1 + math.erf(x / math.sqrt(2)))


# -- 1 ------------------------------------------------------------------------------------


def test_c01_closed_form_update(criterion, rng):
    n_cases = 10_000
    t0 = time.perf_counter()
    G0 = rng.uniform(-1500, 50, n_cases)
    g = rng.choice([P.g_occ, P.g_unk, P.g_free], n_cases)
    g[: n_cases // 4] = rng.uniform(-1200, 0, n_cases // 4)
    n = rng.integers(0, 31, n_cases)
    closed = update_value(G0, g, n.astype(float))
    it = np.empty(n_cases)
    for i, (G, gi, ni) in enumerate(zip(G0.tolist(), g.tolist(), n.tolist())):
        for _ in range(ni):
            G = step_value(G, gi)
        it[i] = G
    dt = time.perf_counter() - t0
    rel = np.abs(closed - it) / np.maximum(np.abs(it), 1e-300)
    ok = bool(rel.max() <= 1e-12 and dt < 1.0)
    criterion(1, ok, f"closed form vs iterated, {n_cases} triples: max rel err {rel.max():.2e}, {dt:.3f} s")
    assert ok


# -- 2 ------------------------------------------------------------------------------------


def test_c02_single_voxel_trace(criterion):
    t0 = time.perf_counter()
    tr = single_voxel_trace(enter=2.0, leave=4.5, duration=7.0, rate_hz=10.0)
    dt = time.perf_counter() - t0
    never_conf = not np.any(tr.G_state == VoxelState.CONFIDENT_OCCUPIED)
    k_free = updates_to_free_after_leaving(tr)
    lo_occ = bool(np.any(tr.L_state[tr.occupied] == LogOddsState.CONFIDENT_OCCUPIED))
    ok = never_conf and k_free is not None and k_free <= 3 and lo_occ and dt < 1.0
    criterion(2, ok, f"single voxel: never confident-occupied={never_conf}, free after {k_free} updates, "
                     f"log-odds occupied during stay={lo_occ}, {dt:.3f} s")
    assert ok


# -- 3 ------------------------------------------------------------------------------------


def _clip_length(a, b, lo, hi):
    """Length of segment a-b inside the box [lo, hi] (slab method)."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for i in range(3):
        if d[i] == 0:
            if not lo[i] <= a[i] <= hi[i]:
                return 0.0
            continue
        u, v = (lo[i] - a[i]) / d[i], (hi[i] - a[i]) / d[i]
        t0, t1 = max(t0, min(u, v)), min(t1, max(u, v))
    return max(0.0, t1 - t0) * float(np.linalg.norm(d))


def test_c03_raycaster_conservation(criterion, rng):
    t0 = time.perf_counter()
    worst, not_adjacent, n_seg = 0.0, 0, 0
    for _ in range(100):
        vs = float(rng.uniform(0.1, 1.0))
        dims = tuple(int(x) for x in rng.integers(3, 30, 3))
        origin = rng.uniform(-5, 5, 3)
        spec = GridSpec(tuple(origin), vs, dims)
        lo, hi = origin, origin + np.array(dims) * vs
        span = hi - lo
        for _ in range(100):
            a = lo - 0.2 * span + rng.random(3) * 1.4 * span
            b = lo - 0.2 * span + rng.random(3) * 1.4 * span
            out = traverse(RaySegment(a, b), spec)
            total = sum(l for _, l in out)
            worst = max(worst, abs(total - _clip_length(a, b, lo, hi)))
            if len(out) > 1:
                steps = np.abs(np.diff(np.array([v for v, _ in out]), axis=0)).sum(axis=1)
                not_adjacent += int(np.any(steps != 1))
            n_seg += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and not_adjacent == 0 and dt < 5.0
    criterion(3, ok, f"{n_seg} segments: max |sum - in-grid length| {worst:.1e}, "
                     f"non-adjacent steps {not_adjacent}, {dt:.2f} s")
    assert ok


# -- 4 ------------------------------------------------------------------------------------


def _floating_oracle(values, start, d_vox):
    """Reachability by set operations: uncertain voxels inside the Manhattan ball, grown from the start."""
    ii = np.indices(values.shape)
    manh = sum(np.abs(ii[a] - start[a]) for a in range(3))
    unc = (values >= P.G_unc) & (values < P.G_tent)
    expandable = unc & (manh < d_vox)
    seed = np.zeros(values.shape, bool)
    seed[start] = True
    comp = np.zeros(values.shape, bool)
    if expandable[start]:
        lab, _ = ndimage.label(expandable)
        comp = lab == lab[start]
    reach = seed | ndimage.binary_dilation(comp)
    return not ((reach & (values >= P.G_tent)).any() or (reach & unc & (manh >= d_vox)).any())


def test_c04_flood_fill_oracle(criterion, rng):
    spec = GridSpec((0.0, 0.0, 0.0), 0.25, (20, 20, 20))
    t0 = time.perf_counter()
    agree, n_true = 0, 0
    n_cases = 500
    for _ in range(n_cases):
        grid = OccupancyGrid(spec)
        p_occ = float(rng.uniform(0.0, 0.05))
        p_unc = float(rng.uniform(0.05, 0.5))
        grid.values[:] = rng.choice([P.g_free, P.g_unk, -200.0, 0.0], size=(20, 20, 20),
                                    p=[1 - p_unc - p_occ, p_unc, p_occ / 2, p_occ / 2])
        center = rng.uniform(1.0, 4.0, 3)
        pts = center + rng.normal(scale=0.2, size=(int(rng.integers(1, 8)), 3))
        d_search = float(rng.choice([0.5, 1.0, 1.5, 3.0]))
        d_vox = int(math.floor(d_search / spec.voxel_size + 1e-9))
        idx, inside = spec.indices_of(pts)
        expect = bool(inside.all()) and all(_floating_oracle(grid.values, tuple(int(c) for c in v), d_vox)
                                            for v in np.unique(idx[inside], axis=0))
        got = is_floating(pts, grid, d_search)
        agree += got == expect
        n_true += expect
    dt = time.perf_counter() - t0
    ok = agree == n_cases and dt < 30.0
    criterion(4, ok, f"rule B vs reachability oracle: {agree}/{n_cases} agree "
                     f"({n_true} floating), {dt:.2f} s")
    assert ok


# -- 5 ------------------------------------------------------------------------------------


def _components(pts, d):
    adj = np.linalg.norm(pts[:, None] - pts[None], axis=-1) <= d
    lab = -np.ones(len(pts), int)
    for s in range(len(pts)):
        if lab[s] >= 0:
            continue
        lab[s] = s
        q = deque([s])
        while q:
            i = q.popleft()
            for j in np.flatnonzero(adj[i] & (lab < 0)):
                lab[j] = s
                q.append(j)
    return {frozenset(map(tuple, pts[lab == r].tolist())) for r in np.unique(lab)}


def test_c05_clustering_oracle(criterion, rng):
    t0 = time.perf_counter()
    agree = 0
    for _ in range(200):
        n = int(rng.integers(1, 501))
        pts = rng.random((n, 3)) * rng.uniform(0.5, 6.0)
        d = float(rng.uniform(0.05, 0.6))
        got = {frozenset(map(tuple, c.points.tolist())) for c in extract_clusters(pts, d)}
        agree += got == _components(pts, d)
    dt = time.perf_counter() - t0
    ok = agree == 200 and dt < 10.0
    criterion(5, ok, f"clusters vs proximity-graph components: {agree}/200 agree, {dt:.2f} s")
    assert ok


# -- 6 ------------------------------------------------------------------------------------


def _dense_kf(x, P_, steps, Q):
    F1 = lambda dt: np.array([[1, dt, dt * dt / 2], [0, 1, dt], [0, 0, 1]])
    Hm = np.kron(np.array([[1.0, 0, 0]]), np.eye(3))
    for dt, z, R in steps:
        F = np.kron(F1(dt), np.eye(3))
        x, P_ = F @ x, F @ P_ @ F.T + Q
        if z is not None:
            K = P_ @ Hm.T @ np.linalg.inv(Hm @ P_ @ Hm.T + R)
            x = x + K @ (z - Hm @ x)
            P_ = (np.eye(9) - K @ Hm) @ P_
    return x, P_


def test_c06_kalman_reference(criterion, rng):
    cfg = TrackerConfig()
    Q = cfg.process_noise
    worst, psd = 0.0, True
    for _ in range(100):
        x0 = rng.normal(size=9)
        P0 = cfg.initial_covariance
        steps = [(float(rng.uniform(0.0, 0.3)), rng.normal(size=3) if rng.random() < 0.7 else None,
                  np.eye(3) * float(rng.uniform(0.05, 2.0))) for _ in range(int(rng.integers(1, 30)))]
        x, P_ = x0, P0
        for dt, z, R in steps:
            x, P_ = predict(x, P_, dt, Q)
            if z is not None:
                x, P_ = correct(x, P_, z, R)
            psd &= bool(np.array_equal(P_, P_.T) and np.linalg.eigvalsh(P_).min() >= -1e-9)
        xr, Pr = _dense_kf(x0, P0, steps, Q)
        err = max(np.abs(x - xr).max() / max(1.0, np.abs(xr).max()),
                  np.abs(P_ - Pr).max() / max(1.0, np.abs(Pr).max()))
        worst = max(worst, err)
    ok = worst <= 1e-9 and psd
    criterion(6, ok, f"KF vs dense reference, 100 sequences: max rel err {worst:.1e}, symmetric PSD={psd}")
    assert ok


# -- 7 ------------------------------------------------------------------------------------


def test_c07_jacobian_finite_differences(criterion, rng):
    worst = 0.0
    for _ in range(100):
        pose = Pose(rng.normal(size=3) * 5, *rng.uniform(-math.pi, math.pi, 3))
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        l = float(rng.uniform(0.5, 100.0))
        J = jacobian(pose, d, l)
        for k in range(7):
            h = 1e-6 if k < 3 or k == 6 else 1e-7
            e = np.zeros(7)
            e[k] = h
            fd = (measured_point(pose, d, l, e) - measured_point(pose, d, l, -e)) / (2 * h)
            worst = max(worst, np.linalg.norm(J[:, k] - fd) / max(np.linalg.norm(J[:, k]), 1e-3))
    ok = worst <= 1e-6
    criterion(7, ok, f"analytic vs central-difference Jacobian, 100 poses: max rel err {worst:.1e}")
    assert ok


# -- 8 ------------------------------------------------------------------------------------


def test_c08_hit_probability_integration(criterion, rng):
    diag_err = 0.0
    for _ in range(50):
        mu = rng.normal(size=3)
        s = rng.uniform(0.01, 1.0, 3)
        lo = mu + rng.uniform(-1.5, 0.5, 3)
        hi = lo + rng.uniform(0.05, 2.0, 3)
        exact = np.prod([Phi((hi[i] - mu[i]) / s[i]) - Phi((lo[i] - mu[i]) / s[i]) for i in range(3)])
        diag_err = max(diag_err, abs(box_probability(mu, np.diag(s ** 2), lo, hi).p - exact))

    worst_z = 0.0
    n_mc = 1_000_000
    for _ in range(4):
        A = rng.normal(size=(3, 3)) * 0.08
        cov = A @ A.T + 1e-4 * np.eye(3)
        mu = rng.normal(scale=0.03, size=3)
        lo, hi = -np.full(3, 0.125), np.full(3, 0.125)
        res = box_probability(mu, cov, lo, hi, n_points=16384)
        x = rng.multivariate_normal(mu, cov, size=n_mc)
        p_mc = np.all((x >= lo) & (x <= hi), axis=1).mean()
        se = math.hypot(math.sqrt(p_mc * (1 - p_mc) / n_mc), res.stderr)
        worst_z = max(worst_z, abs(res.p - p_mc) / se)

    p_zero = box_probability(np.zeros(3), np.zeros((3, 3)), -np.ones(3) * 0.125, np.ones(3) * 0.125).p
    A = rng.normal(size=(3, 3)) * 0.1
    cov = A @ A.T
    p_face = box_probability(np.zeros(3), cov, [0.0, -50, -50], [50.0, 50, 50]).p
    ok = diag_err <= 1e-6 and worst_z <= 3.0 and p_zero == 1.0 and abs(p_face - 0.5) <= 1e-3
    criterion(8, ok, f"box mass: diagonal err {diag_err:.1e}, general vs 1e6 MC max {worst_z:.2f} SE, "
                     f"zero noise {p_zero}, on-face {p_face:.5f}")
    assert ok


# -- 9 ------------------------------------------------------------------------------------


def _brute_detection(dirs, a, l, n, rng, chunk=4000):
    """Uniform sphere centers at distance l; hit when some ray passes within a of the center, in front."""
    hits = 0
    for s in range(0, n, chunk):
        c = rng.standard_normal((min(chunk, n - s), 3))
        c *= l / np.linalg.norm(c, axis=1, keepdims=True)
        proj = c @ dirs.T
        hits += int((((l * l - proj * proj) <= a * a) & (proj > 0)).any(axis=1).sum())
    return hits / n


def test_c09_intersection_probability(criterion, rng):
    exact = all(intersection_probability_single(A, l) == A / (4 * math.pi * l * l)
                for A, l in zip(rng.uniform(0, 1, 100), rng.uniform(1, 100, 100)))
    dirs = SensorSpec(16, 128, 45.0).directions().reshape(-1, 3)
    worst = 0.0
    rows = []
    for l in (3.0, 10.0, 20.0, 40.0):
        p = detection_probability(dirs, 0.325, l, n_samples=1_000_000, seed=11).p
        ref = _brute_detection(dirs, 0.325, l, 100_000, rng)
        if ref > 0.01:
            worst = max(worst, abs(p - ref) / ref)
        rows.append(f"{l:g} m: {p:.4f}/{ref:.4f}")
    ok = exact and worst <= 0.05
    criterion(9, ok, f"A_P/(4 pi l^2) exact={exact}; layout vs ray-sphere MC max rel dev {worst:.2%} "
                     f"({', '.join(rows)})")
    assert ok


# -- 10 and 13 share the full flyby run ----------------------------------------------------


@pytest.fixture(scope="module")
def flyby_run():
    cfg = flyby()
    t0 = time.perf_counter()
    res = run_scenario(cfg)
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_c10_end_to_end_flyby(criterion, flyby_run):
    res, wall = flyby_run
    rep = res.report
    hit_every_tick = [b for b in rep.bins if b.n_ticks and b.n_hit_ticks == b.n_ticks]
    bins_ok = all(b.recall == 1.0 for b in hit_every_tick)
    ok = (len(res.records) == 300 and rep.mean_err_detected is not None and rep.mean_err_detected <= 0.325
          and rep.recall_when_hit == 1.0 and bins_ok and wall < 60.0)
    criterion(10, ok, f"flyby 300 ticks: mean det err {rep.mean_err_detected:.3f} m (bound 0.325), "
                      f"recall when hit {rep.recall_when_hit}, recall in always-hit bins {bins_ok}, "
                      f"tracked err {rep.mean_err_tracked:.3f} m, false dets {rep.n_false_detections}, "
                      f"{wall:.1f} s")
    assert ok


@pytest.mark.slow
def test_c13_throughput(criterion, flyby_run):
    res, _ = flyby_run
    tm = timing_summary(res.records)
    ms = tm["total"] * 1e3
    cores = os.cpu_count() or 1
    stages = ", ".join(f"{k} {v * 1e3:.0f}" for k, v in tm.items() if k != "total")
    line = f"median tick {ms:.1f} ms on {cores} core(s) [{stages}] (target 100 ms on 8 cores)"
    if ms <= 100.0:
        criterion(13, True, line)
        return
    if cores < 8:
        criterion(13, False, line + "; host below the reference machine", status="XFAIL")
        pytest.xfail(f"median tick {ms:.1f} ms on a {cores}-core host; target is stated for 8 cores")
    criterion(13, False, line)
    pytest.fail(line)


# -- 11 ------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c11_ghost_suppression(criterion):
    ghost_tick, ghost = 40, np.array([2.0, -6.0, 5.0])
    cfg = flyby()
    n_buf = cfg.tracker.N_buf
    res = run_scenario(cfg, ticks=ghost_tick + n_buf + 1, extra_detections={ghost_tick: [ghost]})
    before = {t.id for t in res.records[ghost_tick - 1].tracks}
    born = [t for t in res.records[ghost_tick].tracks if t.id not in before
            and np.linalg.norm(np.asarray(t.r) - ghost) < 1.0]
    ghost_ids = {t.id for t in born}
    alive = [k for k in range(ghost_tick, ghost_tick + n_buf + 1)
             if ghost_ids & {t.id for t in res.records[k].tracks}]
    gone_after = (alive[-1] - ghost_tick + 1) if alive else 0
    survivors = ghost_ids & {t.id for t in res.records[ghost_tick + n_buf].tracks}
    ok = len(born) == 1 and not survivors
    criterion(11, ok, f"ghost track started={len(born) == 1}, removed after {gone_after} scans, "
                      f"survivors after {n_buf} scans: {len(survivors)}")
    assert ok


# -- 12 ------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c12_takeoff(criterion):
    cfg = takeoff()
    d_close = cfg.detector.d_close
    vs = cfg.grid.voxel_size
    launch = np.array(cfg.target.trajectory.waypoints[0][1:3])
    trail, sep, dets = [], [], []

    def probe(rec, pipe):
        g = pipe.grid
        occ = np.argwhere(g.values >= g.params.G_tent)
        c = g.spec.origin_array + (occ + 0.5) * vs
        bottom = rec.gt[2] - cfg.target.radius
        # occupied voxels above the ground layer, over the launch site, below the target
        in_trail = ((np.linalg.norm(c[:, :2] - launch, axis=1) < 1.0) & (c[:, 2] > cfg.scene.ground_z + vs)
                    & (c[:, 2] < bottom - vs))
        trail.append(int(in_trail.sum()))
        sep.append(bottom - cfg.scene.ground_z)
        dets.append(len(rec.detections))

    run_scenario(cfg, ticks=80, on_tick=probe)
    k_sep = next(k for k, s in enumerate(sep) if s > d_close)
    k_clear = k_sep + 3
    trail_gone = all(n == 0 for n in trail[k_clear:])
    first_det = next((k for k, n in enumerate(dets) if n), None)
    detected_after = float(np.mean([n > 0 for n in dets[k_clear:]]))
    ok = trail_gone and first_det is not None and first_det <= k_clear and detected_after == 1.0
    criterion(12, ok, f"take-off: separation > d_close at tick {k_sep}, trail voxels from tick {k_clear} on: "
                      f"{max(trail[k_clear:])}, first detection tick {first_det}, "
                      f"detected in {detected_after:.0%} of later ticks")
    assert ok

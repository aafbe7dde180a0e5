"""Scenario runner, metrics and file output."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..core import GridSpec, Pose, SensorSpec, write_scan
from ..detector import Detection
from ..tracker import TrackRecord
from ..voxel_grid import OccupancyGrid
from .config import MetricsConfig, ScenarioConfig
from .pipeline import STAGES, Pipeline
from .scene import Scene, Target, Trajectory, generate_scan


@dataclass
class TickRecord:
    tick: int
    t: float
    gt: np.ndarray | None  # target center, None while absent
    observer: np.ndarray
    target_hits: int
    detections: list[Detection]
    tracks: list[TrackRecord]
    n_separated: int
    timings: dict[str, float]

    @property
    def distance(self) -> float:
        return math.nan if self.gt is None else float(np.linalg.norm(self.gt - self.observer))


@dataclass
class BinStats:
    lo: float
    hi: float
    n_ticks: int = 0
    n_hit_ticks: int = 0
    recall: float | None = None
    recall_when_hit: float | None = None
    recall_tracked: float | None = None
    det_err_mean: float | None = None
    det_err_std: float | None = None
    trk_err_mean: float | None = None
    trk_err_std: float | None = None


@dataclass
class MetricsReport:
    match_radius: float
    n_ticks: int
    n_hit_ticks: int
    recall: float | None
    recall_when_hit: float | None
    recall_tracked: float | None
    mean_err_detected: float | None
    std_err_detected: float | None
    mean_err_tracked: float | None
    std_err_tracked: float | None
    n_detections: int
    n_false_detections: int
    bins: list[BinStats] = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d["recall_by_bin"] = [{"lo": b.lo, "hi": b.hi, "recall": b.recall, "recall_when_hit": b.recall_when_hit,
                               "recall_tracked": b.recall_tracked, "n_ticks": b.n_ticks} for b in self.bins]
        return d


def _mean_std(x: list[float]):
    if not x:
        return None, None
    a = np.asarray(x)
    return float(a.mean()), float(a.std())


def _ratio(num: int, den: int):
    return None if den == 0 else num / den


def compute_metrics(records: list[TickRecord], cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Errors of detections/tracks matched to the target (within ``match_radius``) and recall per distance bin.

    Only ticks with the target present and ``t >= eval_start`` are scored.
    Means over empty sets are reported as ``None``.
    """
    if not records:
        raise ValueError("no tick records to score")
    edges = list(cfg.bin_edges)
    scored = [r for r in records if r.gt is not None and r.t >= cfg.eval_start]
    bins = [BinStats(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
    per_bin = [dict(det=[], trk=[], hit=0, det_ticks=0, det_hit_ticks=0, trk_ticks=0) for _ in bins]
    all_det, all_trk = [], []
    n_det = n_false = det_ticks = det_hit_ticks = trk_ticks = n_hit = 0
    for r in scored:
        dist = r.distance
        b = next((i for i, bs in enumerate(bins) if bs.lo <= dist < bs.hi), None)
        errs = [float(np.linalg.norm(d.position - r.gt)) for d in r.detections]
        matched = [e for e in errs if e <= cfg.match_radius]
        n_det += len(errs)
        n_false += len(errs) - len(matched)
        terrs = [float(np.linalg.norm(np.asarray(tr.r) - r.gt)) for tr in r.tracks]
        tmatch = min(terrs) if terrs and min(terrs) <= cfg.match_radius else None
        hit = r.target_hits > 0
        n_hit += hit
        det_ticks += bool(matched)
        det_hit_ticks += bool(matched) and hit
        trk_ticks += tmatch is not None
        all_det += matched
        if tmatch is not None:
            all_trk.append(tmatch)
        if b is not None:
            pb = per_bin[b]
            bins[b].n_ticks += 1
            bins[b].n_hit_ticks += hit
            pb["det"] += matched
            pb["det_ticks"] += bool(matched)
            pb["det_hit_ticks"] += bool(matched) and hit
            if tmatch is not None:
                pb["trk"].append(tmatch)
                pb["trk_ticks"] += 1
    for bs, pb in zip(bins, per_bin):
        bs.recall = _ratio(pb["det_ticks"], bs.n_ticks)
        bs.recall_when_hit = _ratio(pb["det_hit_ticks"], bs.n_hit_ticks)
        bs.recall_tracked = _ratio(pb["trk_ticks"], bs.n_ticks)
        bs.det_err_mean, bs.det_err_std = _mean_std(pb["det"])
        bs.trk_err_mean, bs.trk_err_std = _mean_std(pb["trk"])
    md, sd = _mean_std(all_det)
    mt, st = _mean_std(all_trk)
    return MetricsReport(cfg.match_radius, len(scored), n_hit, _ratio(det_ticks, len(scored)),
                         _ratio(det_hit_ticks, n_hit), _ratio(trk_ticks, len(scored)), md, sd, mt, st,
                         n_det, n_false, bins)


# -- running ----------------------------------------------------------------------


def sensor_spec(cfg: ScenarioConfig) -> SensorSpec:
    s = cfg.sensor
    return SensorSpec(s.rows, s.cols, s.vertical_fov, s.rate_hz, s.max_range, s.range_precision)


def build_pipeline(cfg: ScenarioConfig) -> Pipeline:
    spec = GridSpec(cfg.grid.origin, cfg.grid.voxel_size, cfg.grid.dims)
    grid = OccupancyGrid(spec, cfg.occupancy)
    if cfg.pipeline.prior != "none":
        grid.init_from_masks(occupied=Scene.from_config(cfg).occupied_mask(spec),
                             pinned=cfg.pipeline.prior == "scene_pinned")
    return Pipeline(spec, cfg.occupancy, cfg.detector, cfg.bg_removal, cfg.tracker, cfg.pipeline, grid=grid)


@dataclass
class RunResult:
    config: ScenarioConfig
    records: list[TickRecord]
    report: MetricsReport
    pipeline: Pipeline


def run_scenario(cfg: ScenarioConfig, ticks: int | None = None,
                 extra_detections: dict[int, list] | None = None,
                 scan_dir: str | Path | None = None,
                 on_tick: Callable[[TickRecord, Pipeline], None] | None = None) -> RunResult:
    """Simulate ``ticks`` scans (default: the whole duration) through a fresh pipeline.

    ``extra_detections`` injects positions (list of 3-vectors) as detections at
    given tick numbers. ``scan_dir`` saves every rendered scan for replay.
    """
    n = cfg.n_ticks if ticks is None else int(ticks)
    rng = np.random.default_rng(cfg.seed)
    sensor = sensor_spec(cfg)
    dirs = sensor.directions()
    scene = Scene.from_config(cfg)
    obs_traj = Trajectory.from_config(cfg.observer.trajectory)
    tgt_traj = Trajectory.from_config(cfg.target.trajectory)
    tc = cfg.target
    pipe = build_pipeline(cfg)
    if scan_dir is not None:
        Path(scan_dir).mkdir(parents=True, exist_ok=True)
    records = []
    try:
        for k in range(n):
            t = k / sensor.rate_hz
            pose = Pose(obs_traj.position(t), cfg.observer.yaw, cfg.observer.pitch, cfg.observer.roll)
            present = t >= tc.appear_time
            target = Target(tgt_traj.position(t), tc.shape, tc.radius, tc.half_extent) if present else None
            rs = generate_scan(sensor, dirs, pose, scene, target, t, cfg.noise, rng, cfg.sensor.self_mask_range)
            if scan_dir is not None:
                write_scan(rs.scan, Path(scan_dir) / f"scan_{k:06d}.fvscan")
            extra = [Detection(np.asarray(p, dtype=np.float64), 0, t) for p in (extra_detections or {}).get(k, [])]
            out = pipe.process(rs.scan, extra)
            rec = TickRecord(k, t, None if target is None else target.center.copy(), pose.translation.copy(),
                             rs.target_hits, out.detections, out.tracks, out.n_separated, out.timings)
            records.append(rec)
            if on_tick is not None:
                on_tick(rec, pipe)
    finally:
        pipe.close()
    return RunResult(cfg, records, compute_metrics(records, cfg.metrics), pipe)


# -- output -------------------------------------------------------------------------


def _f(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror}") from e


def emit(result: RunResult, out_dir) -> list[Path]:
    """Write ticks/detections/tracks/timings CSVs, error and recall curves and ``summary.json``.

    Everything except ``timings.csv`` is a deterministic function of the config.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e.strerror}") from e
    recs, rep = result.records, result.report
    paths = []

    def nearest(errs):
        return min(errs) if errs else None

    rows = []
    for r in recs:
        gt = r.gt if r.gt is not None else [None] * 3
        derr = nearest([float(np.linalg.norm(d.position - r.gt)) for d in r.detections]) if r.gt is not None else None
        terr = nearest([float(np.linalg.norm(np.asarray(tr.r) - r.gt)) for tr in r.tracks]) if r.gt is not None else None
        rows.append([r.tick, _f(r.t), *map(_f, gt), *map(_f, r.observer), _f(r.distance), r.target_hits,
                     len(r.detections), _f(derr), len(r.tracks), _f(terr), r.n_separated])
    p = out / "ticks.csv"
    _write_csv(p, ["tick", "t", "gt_x", "gt_y", "gt_z", "obs_x", "obs_y", "obs_z", "distance", "target_hits",
                   "n_detections", "det_err", "n_tracks", "trk_err", "n_separated"], rows)
    paths.append(p)

    p = out / "detections.csv"
    _write_csv(p, ["tick", "t", "x", "y", "z", "point_count"],
               ([r.tick, _f(d.timestamp), *map(_f, d.position), d.point_count] for r in recs for d in r.detections))
    paths.append(p)

    p = out / "tracks.csv"
    _write_csv(p, ["tick", "time", "id", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "a_x", "a_y", "a_z", "r_unc", "n_det"],
               ([r.tick, _f(tr.time), tr.id, *map(_f, tr.r), *map(_f, tr.v), *map(_f, tr.a), _f(tr.r_unc), tr.n_det]
                for r in recs for tr in r.tracks))
    paths.append(p)

    p = out / "timings.csv"
    _write_csv(p, ["tick", *STAGES, "total"],
               ([r.tick, *(_f(r.timings.get(s, 0.0)) for s in STAGES), _f(sum(r.timings.values()))] for r in recs))
    paths.append(p)

    p = out / "error_over_distance.csv"
    _write_csv(p, ["distance_lo", "distance_hi", "det_err_mean", "det_err_std", "trk_err_mean", "trk_err_std"],
               ([_f(b.lo), _f(b.hi), _f(b.det_err_mean), _f(b.det_err_std), _f(b.trk_err_mean), _f(b.trk_err_std)]
                for b in rep.bins))
    paths.append(p)

    p = out / "recall_over_distance.csv"
    _write_csv(p, ["distance_lo", "distance_hi", "n_ticks", "recall", "recall_when_hit", "recall_tracked"],
               ([_f(b.lo), _f(b.hi), b.n_ticks, _f(b.recall), _f(b.recall_when_hit), _f(b.recall_tracked)]
                for b in rep.bins))
    paths.append(p)

    p = out / "summary.json"
    summary = {"scenario": result.config.name, "seed": result.config.seed, "ticks": len(recs), **rep.summary()}
    try:
        p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"cannot write {p}: {e.strerror}") from e
    paths.append(p)
    return paths


def timing_summary(records: list[TickRecord]) -> dict[str, float]:
    """Median wall time per stage and for the whole tick, in seconds."""
    out = {s: float(np.median([r.timings.get(s, 0.0) for r in records])) for s in STAGES}
    out["total"] = float(np.median([sum(r.timings.values()) for r in records]))
    return out

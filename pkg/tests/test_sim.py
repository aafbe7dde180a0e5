import json
import math

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from flyvox.cli import main
from flyvox.core import Pose, SensorSpec
from flyvox.detector import Detection
from flyvox.sim import (ConfigError, TickRecord, compute_metrics, config_from_dict, config_to_dict, emit, flyby,
                        load_config, run_scenario, single_voxel_trace, takeoff)
from flyvox.sim.config import MetricsConfig
from flyvox.sim.curves import curves_config_from_dict, run_curves
from flyvox.sim.scene import Scene, Target, Trajectory, cast, generate_scan, ray_sphere
from flyvox.sim.scenarios import updates_to_free_after_leaving
from flyvox.tracker import TrackRecord
from flyvox.voxel_grid import VoxelState

SMALL = dict(sensor={"rows": 32, "cols": 256}, grid={"origin": [-12, -12, -1], "voxel_size": 0.25,
                                                      "dims": [96, 96, 28]})


def small_flyby(duration=1.6):
    return flyby(duration=duration, **SMALL)


# -- configuration ----------------------------------------------------------------


def test_bundled_configs_roundtrip():
    for name, make in (("flyby", flyby), ("takeoff", takeoff)):
        cfg = load_config(f"configs/{name}.yaml")
        assert cfg == make()
        assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize("patch, path", [
    ({"duration": -1}, "<root>"),
    ({"bogus": 1}, "bogus"),
    ({"tracker": {"N_buf": 0}}, "tracker"),
    ({"occupancy": {"G_conf": -500.0}}, "occupancy"),
    ({"grid": {"voxel_size": "big"}}, "grid.voxel_size"),
    ({"pipeline": {"sep_stage": "later"}}, "pipeline.sep_stage"),
    ({"detector": {"d_close": 0.7, "extra": 1}}, "detector.extra"),
])
def test_config_errors_name_the_field(patch, path):
    data = config_to_dict(flyby())
    data.update(patch)
    with pytest.raises(ConfigError) as e:
        config_from_dict(data, "x.yaml")
    assert any(p == path or p.startswith(path) for p, _ in e.value.errors), e.value.errors
    assert str(e.value).startswith("x.yaml: invalid configuration")


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "a.yaml").write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "a.yaml")
    (tmp_path / "b.yaml").write_text("key: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "b.yaml")


# -- scene --------------------------------------------------------------------------


def test_ray_sphere_matches_sampling(rng):
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    c, r = np.array([3.0, 0.5, 0.2]), 1.0
    t = ray_sphere(np.zeros(3), dirs, c, r)
    hit = np.isfinite(t)
    # a ray hits iff it passes within r of the center in front of the origin
    proj = dirs @ c
    perp2 = c @ c - proj ** 2
    assert np.array_equal(hit, (perp2 <= r * r) & (proj > 0))
    assert np.allclose(np.linalg.norm(t[hit, None] * dirs[hit] - c, axis=1), r)
    assert ray_sphere(c, dirs[:3], c, r).tolist() == [0.0, 0.0, 0.0]  # origin inside


def test_cast_ground_boxes_and_target():
    scene = Scene(0.0, np.array([[[4.0, -1, -1], [5.0, 1, 1]]]))
    o = np.array([0.0, 0.0, 2.0])
    down = np.array([[0.0, 0.0, -1.0]])
    d, on_t = cast(o, down, scene, None)
    assert d[0] == pytest.approx(2.0) and not on_t[0]
    fwd = np.array([[1.0, 0.0, -0.5]]) / math.sqrt(1.25)
    d, _ = cast(o, fwd, scene, None)
    assert d[0] == pytest.approx(math.sqrt(1.25) * 4.0)  # box face x = 4 at z = 0
    d, on_t = cast(o, np.array([[1.0, 0.0, 0.0]]), scene, Target(np.array([2.0, 0, 2]), radius=0.5))
    assert d[0] == pytest.approx(1.5) and on_t[0]
    d, _ = cast(o, np.array([[0.0, 0.0, 1.0]]), Scene(None, np.zeros((0, 2, 3))), None)
    assert d[0] == math.inf


def test_trajectory_interpolates_and_holds():
    tr = Trajectory([[0, 0, 0, 0], [2, 2, 0, 0]])
    assert np.allclose(tr.position(1.0), [1, 0, 0])
    assert np.allclose(tr.position(5.0), [2, 0, 0]) and np.allclose(tr.position(-1.0), [0, 0, 0])
    assert np.allclose(tr.velocity(1.0), [1, 0, 0]) and np.allclose(tr.velocity(3.0), 0)


def test_generated_scan_is_consistent():
    s = SensorSpec(8, 64, 30.0, max_range=30.0)
    scene = Scene(0.1, np.zeros((0, 2, 3)))
    pose = Pose(np.array([0, 0, 3.0]))
    sc = generate_scan(s, s.directions(), pose, scene, None, 0.0).scan
    # up-looking rays are empty, down-looking ones return the ground distance within range
    sin_el = s.directions()[..., 2]
    assert np.all(sc.empty[sin_el > 0])
    with np.errstate(divide="ignore"):
        dist = np.where(sin_el < 0, 2.9 / -sin_el, np.inf)
    assert np.array_equal(sc.empty, ~(dist <= 30.0))
    assert np.allclose(sc.ranges[~sc.empty], dist[~sc.empty])
    rs = generate_scan(s, s.directions(), pose, scene, Target(np.array([5.0, 0.0, 3.0])), 0.0)
    assert rs.target_hits > 0 and rs.target_hits == int((~rs.scan.empty & (rs.scan.ranges < 5.0)).sum())


def test_voxel_trace_clears_in_a_few_updates():
    tr = single_voxel_trace()
    assert np.all(tr.G_state[tr.occupied] == VoxelState.UNCERTAIN)
    k = updates_to_free_after_leaving(tr)
    assert k is not None and k <= 3


# -- metrics --------------------------------------------------------------------------


def _rec(tick, gt, dets=(), tracks=(), hits=1):
    return TickRecord(tick, 0.1 * tick, None if gt is None else np.array(gt, float), np.zeros(3), hits,
                      [Detection(np.array(d, float), 1, 0.0) for d in dets],
                      [TrackRecord(0.0, 1, tuple(t), (0, 0, 0), (0, 0, 0), 1.5, 1) for t in tracks], 0, {})


def test_metrics_small_example():
    recs = [
        _rec(0, None, dets=[[1, 1, 1]]),  # target absent: not scored
        _rec(1, [3, 4, 0], dets=[[3, 4, 0.5]], tracks=[[3, 4, 0.2]]),
        _rec(2, [3, 4, 0], dets=[[3, 4, 1.5], [30, 0, 0]]),
        _rec(3, [6, 8, 0], hits=0),
    ]
    rep = compute_metrics(recs, MetricsConfig(match_radius=2.0, bin_edges=[0, 6, 20]))
    assert rep.n_ticks == 3 and rep.n_hit_ticks == 2
    assert rep.recall == pytest.approx(2 / 3) and rep.recall_when_hit == 1.0
    assert rep.mean_err_detected == pytest.approx(1.0) and rep.std_err_detected == pytest.approx(0.5)
    assert rep.mean_err_tracked == pytest.approx(0.2) and rep.recall_tracked == pytest.approx(1 / 3)
    assert rep.n_detections == 3 and rep.n_false_detections == 1
    b0, b1 = rep.bins
    assert (b0.n_ticks, b0.recall, b1.n_ticks, b1.recall, b1.recall_when_hit) == (2, 1.0, 1, 0.0, None)
    with pytest.raises(ValueError):
        compute_metrics([])


# -- runs and output ----------------------------------------------------------------


def test_emit_is_deterministic(tmp_path):
    files = {}
    for run in ("a", "b"):
        res = run_scenario(small_flyby())
        emit(res, tmp_path / run)
        files[run] = {p.name: p.read_bytes() for p in (tmp_path / run).iterdir() if p.name != "timings.csv"}
    assert files["a"] == files["b"] and len(files["a"]) == 6
    s = json.loads(files["a"]["summary.json"])
    assert s["scenario"] == "flyby" and s["ticks"] == 16


def test_seed_changes_noise_only(tmp_path):
    a = run_scenario(flyby(duration=0.3, seed=1, noise={"range": 0.02}, **SMALL))
    b = run_scenario(flyby(duration=0.3, seed=2, noise={"range": 0.02}, **SMALL))
    assert not np.array_equal(a.pipeline.grid.values, b.pipeline.grid.values)


def test_injected_detection_reaches_tracker():
    res = run_scenario(small_flyby(0.5), extra_detections={1: [[2.0, -6.0, 5.0]]})
    assert any(np.allclose(t.r, [2.0, -6.0, 5.0], atol=0.5) for t in res.records[1].tracks)


# -- command line -------------------------------------------------------------------


def _write_cfg(tmp_path, cfg):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(config_to_dict(cfg)))
    return p


def test_cli_run_and_replay(tmp_path):
    cfg = _write_cfg(tmp_path, small_flyby(1.2))
    r = CliRunner().invoke(main, ["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
                                  "--save-scans", str(tmp_path / "scans")])
    assert r.exit_code == 0, r.output
    assert '"recall"' in r.output and (tmp_path / "o" / "summary.json").exists()
    assert len(list((tmp_path / "scans").glob("*.fvscan"))) == 12
    r = CliRunner().invoke(main, ["replay", "--scans", str(tmp_path / "scans"), "--config", str(cfg),
                                  "--out", str(tmp_path / "rp")])
    assert r.exit_code == 0, r.output
    # replay sees the same scans and finds the same detections
    ran = (tmp_path / "o" / "detections.csv").read_text().splitlines()
    rep = (tmp_path / "rp" / "detections.csv").read_text().splitlines()
    assert len(ran) == len(rep) and len(ran) > 1


def test_cli_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**config_to_dict(flyby()), "duration": "long"}))
    r = CliRunner().invoke(main, ["run", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert r.exit_code == 2 and "duration" in r.output
    r = CliRunner().invoke(main, ["run", "--scenario", "flyby", "--config", str(bad), "--out", "x"])
    assert r.exit_code == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = _write_cfg(tmp_path, small_flyby(0.1))
    r = CliRunner().invoke(main, ["run", "--config", str(cfg), "--out", str(blocker / "sub")])
    assert r.exit_code == 3
    r = CliRunner().invoke(main, ["curves", "--config", str(cfg), "--out", str(tmp_path / "c")])
    assert r.exit_code == 2


def test_curves(tmp_path):
    cfg = curves_config_from_dict({
        "hit_probability": {"distances": {"start": 1, "stop": 20, "num": 4},
                            "noise": [{"label": "a", "angles": 0.002, "range": 0.05}]},
        "detection_probability": {"distances": {"start": 5, "stop": 40, "num": 3}, "n_samples": 5000,
                                  "sensors": {"small": {"rows": 16, "cols": 128}, "os1": "os1"}},
    })
    paths = run_curves(cfg, tmp_path)
    hit = (tmp_path / "hit_probability.csv").read_text().splitlines()
    det = (tmp_path / "detection_probability.csv").read_text().splitlines()
    assert len(paths) == 2 and len(hit) == 5 and len(det) == 7
    p_small = [float(l.split(",")[2]) for l in det[1:] if l.startswith("small")]
    p_os1 = [float(l.split(",")[2]) for l in det[1:] if l.startswith("os1")]
    assert all(a <= b for a, b in zip(p_small, p_os1))
    with pytest.raises(ConfigError):
        curves_config_from_dict({"hit_probability": {"noise": [{"angles": 0.1}]}})

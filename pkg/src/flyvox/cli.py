"""Command-line entry point: ``flyvox run | curves | replay``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O failure,
1 any other runtime failure.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .sim.config import ConfigError, config_from_dict, config_to_dict, load_config

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 1


def _fail(code: int, msg: str):
    click.echo(f"flyvox: error: {msg}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map library exceptions to diagnostics and exit codes."""
    try:
        return fn()
    except ConfigError as e:
        _fail(EXIT_CONFIG, str(e))
    except OSError as e:
        _fail(EXIT_IO, str(e))
    except Exception as e:  # noqa: BLE001 - report, don't trace
        _fail(EXIT_RUNTIME, f"{type(e).__name__}: {e}")


def _scenario(config: str | None, scenario: str | None, seed: int | None):
    from .sim.scenarios import SCENARIOS

    if (config is None) == (scenario is None):
        raise ConfigError([("<args>", "give exactly one of --config or --scenario")], "<command line>")
    if config is not None:
        cfg = load_config(config)
        source = config
    else:
        cfg = SCENARIOS[scenario]()
        source = scenario
    if seed is not None:
        data = config_to_dict(cfg)
        data["seed"] = seed
        cfg = config_from_dict(data, source)
    return cfg


@click.group()
@click.version_option(package_name="flyvox")
def main():
    """Flying-object detection and tracking on a multi-state voxel map."""


@main.command()
@click.option("--config", "config", type=click.Path(dir_okay=False), help="Scenario YAML file.")
@click.option("--scenario", type=click.Choice(["flyby", "takeoff"]), help="Built-in scenario instead of a file.")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--ticks", type=click.IntRange(min=1), default=None, help="Number of scans (default: duration).")
@click.option("--save-scans", type=click.Path(file_okay=False), default=None,
              help="Also write every rendered scan here for replay.")
@click.option("--quiet", is_flag=True, help="Do not print the summary.")
def run(config, scenario, out, seed, ticks, save_scans, quiet):
    """Simulate a scenario and write per-tick logs, curves and a JSON summary."""
    from .sim.run import emit, run_scenario, timing_summary

    def go():
        cfg = _scenario(config, scenario, seed)
        result = run_scenario(cfg, ticks=ticks, scan_dir=save_scans)
        paths = emit(result, out)
        if not quiet:
            s = result.report.summary()
            keys = ["n_ticks", "recall", "recall_when_hit", "mean_err_detected", "mean_err_tracked",
                    "n_false_detections"]
            click.echo(json.dumps({k: s[k] for k in keys}, indent=2))
            click.echo("median stage times [ms]: " + ", ".join(
                f"{k}={v * 1e3:.1f}" for k, v in timing_summary(result.records).items()))
            click.echo(f"wrote {len(paths)} files to {out}")

    _guard(go)


@main.command()
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False), help="Curves YAML file.")
@click.option("--out", "out", default="curves_out", show_default=True, type=click.Path(file_okay=False))
def curves(config, out):
    """Hit-probability and detection-probability curves over distance."""
    from .sim.curves import load_curves_config, run_curves

    def go():
        cfg = load_curves_config(config)
        if cfg.hit_probability is None and cfg.detection_probability is None:
            raise ConfigError([("<root>", "nothing to compute: add hit_probability and/or detection_probability")],
                              config)
        for p in run_curves(cfg, out):
            click.echo(f"wrote {p}")

    _guard(go)


@main.command()
@click.option("--scans", "scans", required=True, type=click.Path(file_okay=False, exists=True),
              help="Directory of .fvscan files, processed in name order.")
@click.option("--config", "config", type=click.Path(dir_okay=False),
              help="Scenario YAML for grid and algorithm parameters.")
@click.option("--scenario", type=click.Choice(["flyby", "takeoff"]), help="Built-in scenario for the parameters.")
@click.option("--out", "out", required=True, type=click.Path(file_okay=False))
def replay(scans, config, scenario, out):
    """Run the detector and tracker over saved scans; writes detections.csv and tracks.csv."""
    from .core import read_scan
    from .sim.run import build_pipeline
    from .detector import write_detections_csv
    from .tracker import write_tracks_csv

    def go():
        cfg = _scenario(config, scenario, None)
        files = sorted(Path(scans).glob("*.fvscan"))
        if not files:
            raise OSError(f"no .fvscan files in {scans}")
        pipe = build_pipeline(cfg)
        dets, tracks = [], []
        try:
            for f in files:
                o = pipe.process(read_scan(f))
                dets.extend(o.detections)
                tracks.extend(o.tracks)
        finally:
            pipe.close()
        Path(out).mkdir(parents=True, exist_ok=True)
        write_detections_csv(dets, Path(out) / "detections.csv")
        write_tracks_csv(tracks, Path(out) / "tracks.csv")
        click.echo(f"{len(files)} scans, {len(dets)} detections, {len(tracks)} track records -> {out}")

    _guard(go)


if __name__ == "__main__":  # pragma: no cover
    main()

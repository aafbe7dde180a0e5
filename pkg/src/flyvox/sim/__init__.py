"""Scenario harness: analytic scene rendering, per-tick pipeline, metrics and output."""
from .config import ConfigError, ScenarioConfig, config_from_dict, config_to_dict, load_config
from .pipeline import STAGES, Pipeline, TickOutput
from .run import (MetricsReport, RunResult, TickRecord, build_pipeline, compute_metrics, emit, run_scenario,
                  timing_summary)
from .scenarios import SCENARIOS, flyby, single_voxel_trace, takeoff

__all__ = [
    "ConfigError", "MetricsReport", "Pipeline", "RunResult", "SCENARIOS", "STAGES", "ScenarioConfig",
    "TickOutput", "TickRecord", "build_pipeline", "compute_metrics", "config_from_dict", "config_to_dict",
    "emit", "flyby", "load_config", "run_scenario", "single_voxel_trace", "takeoff", "timing_summary",
]

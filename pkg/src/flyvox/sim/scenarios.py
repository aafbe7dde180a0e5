"""Ready-made scenarios and the single-voxel occupancy trace."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..voxel_grid import (LogOddsParams, LogOddsState, OccupancyParams, VoxelState, classify,
                          log_odds_classify, update_value)
from .config import ScenarioConfig, config_from_dict

# static buildings used by the bundled scenarios
_BOXES = [
    {"min": [6.0, -9.0, 0.0], "max": [9.0, -6.0, 3.0]},
    {"min": [-14.0, 6.0, 0.0], "max": [-11.0, 12.0, 5.0]},
]


def flyby(duration: float = 30.0, seed: int = 0, **overrides) -> ScenarioConfig:
    """Hovering observer, target crossing the field of view at 7-13 m after a 1 s warm-up."""
    cfg = {
        "name": "flyby",
        "duration": duration,
        "seed": seed,
        "scene": {"ground_z": 0.1, "boxes": _BOXES},
        "observer": {"trajectory": {"waypoints": [[0.0, 0.0, 0.0, 3.0]]}},
        "target": {
            "trajectory": {"waypoints": [[0.0, 8.0, 0.0, 4.0], [8.0, 3.0, 8.0, 4.5], [16.0, -7.0, 9.0, 4.0],
                                         [24.0, -11.0, 1.0, 3.5], [30.0, -8.0, -5.0, 4.0]]},
            "radius": 0.325,
            "appear_time": 1.0,
        },
        "metrics": {"eval_start": 1.0},
    }
    cfg.update(overrides)
    return config_from_dict(cfg, "flyby")


def takeoff(duration: float = 10.0, seed: int = 0, **overrides) -> ScenarioConfig:
    """Target resting on the ground for 2 s, then climbing at 0.5 m/s to 3.5 m."""
    ground = 0.1
    r = 0.325
    cfg = {
        "name": "takeoff",
        "duration": duration,
        "seed": seed,
        "scene": {"ground_z": ground, "boxes": _BOXES},
        "observer": {"trajectory": {"waypoints": [[0.0, 0.0, 0.0, 2.5]]}},
        "target": {
            "trajectory": {"waypoints": [[0.0, 7.0, 2.0, ground + r], [2.0, 7.0, 2.0, ground + r],
                                         [8.0, 7.0, 2.0, 3.5]]},
            "radius": r,
        },
        "metrics": {"eval_start": 0.0},
    }
    cfg.update(overrides)
    return config_from_dict(cfg, "takeoff")


SCENARIOS = {"flyby": flyby, "takeoff": takeoff}


# -- single-voxel trace -----------------------------------------------------------


@dataclass
class VoxelTrace:
    t: np.ndarray
    occupied: np.ndarray  # target inside the voxel at this tick
    G: np.ndarray
    G_state: np.ndarray
    L: np.ndarray
    L_state: np.ndarray


def single_voxel_trace(enter: float = 2.0, leave: float = 4.5, duration: float = 7.0, rate_hz: float = 10.0,
                       free_weight: float = 1.0, params: OccupancyParams = OccupancyParams(),
                       lo_params: LogOddsParams = LogOddsParams()) -> VoxelTrace:
    """One voxel seen every tick: free (ray passes) except while a flying object sits in it.

    The exponential map gets ``g_free`` with ``free_weight`` on free ticks and the
    detected-object update (``g_unk``, infinite weight) on occupied ticks; the
    log-odds map gets a miss or a hit respectively.
    """
    n = int(round(duration * rate_hz))
    t = np.arange(n) / rate_hz
    occ = (t >= enter - 1e-9) & (t < leave - 1e-9)
    G = np.empty(n)
    L = np.empty(n)
    g, l = params.g_unk, 0.0
    for i in range(n):
        if occ[i]:
            g = float(update_value(g, params.g_unk, math.inf))
            l = min(l + lo_params.l_occ, lo_params.L_max)
        else:
            g = float(update_value(g, params.g_free, free_weight))
            l = max(l + lo_params.l_free, lo_params.L_min)
        G[i], L[i] = g, l
    G_state = np.asarray(classify(G, params))
    L_state = np.array([log_odds_classify(v, lo_params) for v in L], dtype=np.int8)
    return VoxelTrace(t, occ, G, G_state, L, L_state)


def updates_to_free_after_leaving(trace: VoxelTrace) -> int | None:
    """Number of free updates after departure until the exponential map is confident free."""
    idx = np.flatnonzero(trace.occupied)
    if idx.size == 0:
        return None
    for k, i in enumerate(range(idx[-1] + 1, trace.t.size), start=1):
        if trace.G_state[i] == VoxelState.CONFIDENT_FREE:
            return k
    return None


__all__ = ["flyby", "takeoff", "SCENARIOS", "single_voxel_trace", "updates_to_free_after_leaving",
           "VoxelTrace", "LogOddsState"]

"""Occupancy map with the multi-class exponential update, plus a log-odds baseline.

Each update halves the gap between a voxel's value G and a class coefficient
g. ``n`` updates with the same coefficient collapse to

    G' = 2**-n * G + (1 - 2**-n) * g

which is also used with real-valued (and infinite) weights ``n``. Voxels
pinned to +/-inf never change.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ._backend import kernels
from .core import GridSpec, InvalidInputError, VoxelIndex


class ContractViolation(ValueError):
    """An update batch broke its preconditions."""


class VoxelState(enum.IntEnum):
    CONFIDENT_FREE = 0
    UNCERTAIN = 1
    TENTATIVE_OCCUPIED = 2
    CONFIDENT_OCCUPIED = 3


@dataclass(frozen=True)
class OccupancyParams:
    """Coefficients and thresholds; defaults are the values used in the experiments."""

    g_occ: float = 0.0
    g_unk: float = -740.0
    g_free: float = -1000.0
    G_conf: float = -0.1
    G_tent: float = -300.0
    G_unc: float = -750.0

    def __post_init__(self):
        if not (self.G_conf > self.G_tent > self.G_unc):
            raise ValueError("thresholds must satisfy G_conf > G_tent > G_unc")
        if not self.g_free < self.G_unc:
            raise ValueError("g_free must lie below G_unc so free updates can reach confident free")


def update_value(G_prev, g, n):
    """Closed-form result of ``n`` exponential updates with coefficient ``g``.

    Works on scalars and arrays. ``n = inf`` returns ``g``; pinned (infinite)
    previous values pass through unchanged.
    """
    G_prev = np.asarray(G_prev, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0) or np.any(np.isnan(n)):
        raise InvalidInputError("update weight n must be >= 0")
    w = np.power(2.0, -n)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(G_prev), G_prev, w * G_prev + (1.0 - w) * g)
    # exact limits, independent of rounding in pow
    out = np.where(np.isinf(n) & np.isfinite(G_prev), g, out)
    return out[()] if out.ndim == 0 else out


def step_value(G_prev: float, g: float) -> float:
    """A single exponential-filter step (averaging with the coefficient)."""
    if math.isinf(G_prev):
        return G_prev
    return (G_prev + g) / 2.0


def classify(G, params: OccupancyParams = OccupancyParams()):
    """Voxel state(s) for value(s) ``G``: half-open bands, lower edge inclusive."""
    G = np.asarray(G, dtype=np.float64)
    states = np.full(G.shape, VoxelState.CONFIDENT_FREE, dtype=np.int8)
    states[G >= params.G_unc] = VoxelState.UNCERTAIN
    states[G >= params.G_tent] = VoxelState.TENTATIVE_OCCUPIED
    states[G >= params.G_conf] = VoxelState.CONFIDENT_OCCUPIED
    if states.ndim == 0:
        return VoxelState(int(states))
    return states


@dataclass(frozen=True)
class WeightedUpdate:
    voxel: VoxelIndex
    g: float
    n: float

    def __post_init__(self):
        if not self.n >= 0:
            raise InvalidInputError(f"update weight must be >= 0, got {self.n}")


class Prior(enum.Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    PINNED_OCCUPIED = "pinned_occupied"
    PINNED_FREE = "pinned_free"
    UNKNOWN = "unknown"


class OccupancyGrid:
    """Dense map of G values over a :class:`GridSpec`.

    Single writer: callers apply one batch at a time; readers take
    :meth:`snapshot` copies or read between batches.
    """

    def __init__(self, spec: GridSpec, params: OccupancyParams = OccupancyParams(), values=None):
        self.spec = spec
        self.params = params
        if values is None:
            self.values = np.full(spec.dims, params.g_unk, dtype=np.float64)
        else:
            values = np.array(values, dtype=np.float64).reshape(spec.dims)
            self.values = values

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1)

    def snapshot(self) -> "OccupancyGrid":
        return OccupancyGrid(self.spec, self.params, self.values.copy())

    def value(self, v: VoxelIndex) -> float:
        return float(self.values[tuple(v)])

    def state(self, v: VoxelIndex) -> VoxelState:
        return classify(self.value(v), self.params)

    def states(self) -> np.ndarray:
        return classify(self.values, self.params)

    def occupied_mask(self, threshold: float | None = None) -> np.ndarray:
        """Voxels at least tentative occupied (or >= ``threshold``)."""
        return self.values >= (self.params.G_tent if threshold is None else threshold)

    def occupied_centers(self, threshold: float | None = None) -> np.ndarray:
        idx = np.argwhere(self.occupied_mask(threshold))
        return self.spec.centers(idx)

    def apply_updates(self, updates: Iterable[WeightedUpdate]) -> None:
        """Apply a batch; each voxel may carry only one coefficient per batch.

        Repeated entries for the same voxel and coefficient add their weights.
        """
        merged: dict[VoxelIndex, list] = {}
        for u in updates:
            v = tuple(int(c) for c in u.voxel)
            if not self.spec.contains_index(v):
                raise ContractViolation(f"voxel {v} outside grid")
            if v in merged:
                if merged[v][0] != u.g:
                    raise ContractViolation(f"conflicting coefficients for voxel {v} in one batch")
                merged[v][1] += u.n
            else:
                merged[v] = [u.g, u.n]
        if not merged:
            return
        idx = np.array(list(merged.keys()), dtype=np.int64)
        g = np.array([m[0] for m in merged.values()])
        n = np.array([m[1] for m in merged.values()])
        self.apply_flat(self.spec.flat(idx), g, n)

    def apply_flat(self, flat_idx: np.ndarray, g, n) -> None:
        """Vectorized batch over distinct flat indices."""
        flat_idx = np.asarray(flat_idx, dtype=np.int64)
        if flat_idx.size == 0:
            return
        vals = self.flat_values
        vals[flat_idx] = update_value(vals[flat_idx], g, n)

    def apply_dense(self, weights: np.ndarray, g: float, skip: np.ndarray | None = None) -> int:
        """Update every voxel with a nonzero entry in the flat ``weights`` by coefficient ``g``.

        Voxels flagged in ``skip`` are left out. Returns the number of voxels addressed.
        """
        w = np.ascontiguousarray(weights, dtype=np.float64).ravel()
        if w.size != self.spec.size:
            raise InvalidInputError("weights must cover the whole grid")
        if w.size and not w.min() >= 0:  # also catches NaN
            raise InvalidInputError("update weight n must be >= 0")
        sk = np.zeros(w.size, np.uint8) if skip is None else np.ascontiguousarray(skip).ravel().view(np.uint8)
        return int(kernels.apply_free_weights(self.flat_values, w, sk, float(g)))

    def init_from_prior(self, prior: Mapping[VoxelIndex, Prior | str]) -> None:
        """Reset to g_unk, then write a-priori knowledge; pinned voxels become +/-inf."""
        p = self.params
        fill = {
            Prior.OCCUPIED: p.g_occ,
            Prior.FREE: p.g_free,
            Prior.PINNED_OCCUPIED: math.inf,
            Prior.PINNED_FREE: -math.inf,
            Prior.UNKNOWN: p.g_unk,
        }
        self.values.fill(p.g_unk)
        for v, kind in prior.items():
            if not self.spec.contains_index(v):
                raise InvalidInputError(f"prior voxel {v} outside grid")
            self.values[tuple(v)] = fill[Prior(kind)]

    def init_from_masks(self, occupied=None, free=None, pinned: bool = False) -> None:
        """Array form of :meth:`init_from_prior` for large a-priori maps."""
        p = self.params
        self.values.fill(p.g_unk)
        if free is not None:
            self.values[np.asarray(free, bool)] = -math.inf if pinned else p.g_free
        if occupied is not None:
            self.values[np.asarray(occupied, bool)] = math.inf if pinned else p.g_occ

    # -- snapshot I/O -------------------------------------------------------

    _MAGIC = b"FVGRID01"
    _HEADER = struct.Struct("<8sB3dd3q9d")

    def save(self, path, compact: bool = False) -> None:
        """Header (spec, params) followed by the raw or run-length encoded values."""
        p = self.params
        head = self._HEADER.pack(
            self._MAGIC, 1 if compact else 0, *self.spec.origin, self.spec.voxel_size,
            *self.spec.dims, p.g_occ, p.g_unk, p.g_free, p.G_conf, p.G_tent, p.G_unc, 0.0, 0.0, 0.0,
        )
        with open(path, "wb") as fh:
            fh.write(head)
            if compact:
                counts, vals = rle_encode(self.flat_values)
                fh.write(struct.pack("<q", counts.size))
                fh.write(counts.astype("<i8").tobytes())
                fh.write(vals.astype("<f8").tobytes())
            else:
                fh.write(self.flat_values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        data = Path(path).read_bytes()
        if len(data) < cls._HEADER.size:
            raise InvalidInputError(f"{path}: truncated grid header")
        fields = cls._HEADER.unpack_from(data)
        if fields[0] != cls._MAGIC:
            raise InvalidInputError(f"{path}: not a flyvox grid file")
        compact = bool(fields[1])
        spec = GridSpec(tuple(fields[2:5]), fields[5], tuple(fields[6:9]))
        params = OccupancyParams(*fields[9:15])
        off = cls._HEADER.size
        if compact:
            (nruns,) = struct.unpack_from("<q", data, off)
            off += 8
            counts = np.frombuffer(data, "<i8", nruns, off)
            vals = np.frombuffer(data, "<f8", nruns, off + 8 * nruns)
            flat = rle_decode(counts, vals)
        else:
            flat = np.frombuffer(data, "<f8", spec.size, off).copy()
        if flat.size != spec.size:
            raise InvalidInputError(f"{path}: value count {flat.size} != grid size {spec.size}")
        return cls(spec, params, flat)


def rle_encode(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run-length encode a 1-D array (bitwise equality, so +/-inf runs compress too)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    bits = values.view(np.int64)
    starts = np.flatnonzero(np.r_[True, bits[1:] != bits[:-1]])
    counts = np.diff(np.r_[starts, values.size])
    return counts.astype(np.int64), values[starts]


def rle_decode(counts, vals) -> np.ndarray:
    return np.repeat(np.asarray(vals, dtype=np.float64), np.asarray(counts, dtype=np.int64))


# -- log-odds baseline ------------------------------------------------------


@dataclass(frozen=True)
class LogOddsParams:
    """OctoMap-style defaults (hit 0.7, miss 0.4, clamping 0.12 / 0.97)."""

    l_occ: float = 0.85
    l_free: float = -0.4
    L_occ: float = 0.0
    L_free: float = 0.0
    L_min: float = -2.0
    L_max: float = 3.5


class LogOddsState(enum.IntEnum):
    CONFIDENT_FREE = 0
    UNCERTAIN = 1
    CONFIDENT_OCCUPIED = 3


def log_odds_classify(L, params: LogOddsParams = LogOddsParams()) -> LogOddsState:
    if L >= params.L_occ:
        return LogOddsState.CONFIDENT_OCCUPIED
    if L <= params.L_free:
        return LogOddsState.CONFIDENT_FREE
    return LogOddsState.UNCERTAIN


class LogOddsGrid:
    """Additive log-odds map clamped to [L_min, L_max]; prior probability 0.5."""

    def __init__(self, spec: GridSpec, params: LogOddsParams = LogOddsParams()):
        self.spec = spec
        self.params = params
        self.values = np.zeros(spec.dims, dtype=np.float64)

    def update(self, hits: Iterable[VoxelIndex], passes: Iterable[VoxelIndex]) -> None:
        """Hit voxels get l_occ; voxels only passed through get l_free."""
        p = self.params
        hit_set = {tuple(int(c) for c in v) for v in hits}
        pass_set = {tuple(int(c) for c in v) for v in passes} - hit_set
        for vs, inc in ((hit_set, p.l_occ), (pass_set, p.l_free)):
            for v in vs:
                self.values[v] = min(max(self.values[v] + inc, p.L_min), p.L_max)

    def state(self, v: VoxelIndex) -> LogOddsState:
        return log_odds_classify(float(self.values[tuple(v)]), self.params)

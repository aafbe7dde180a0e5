"""Measurement uncertainty from pose/range noise, voxel hit probability and
target detection probability over distance.

Noise vector order: ``w = (t_x, t_y, t_z, alpha, beta, gamma, l)`` with alpha
about x (roll), beta about y (pitch), gamma about z (yaw), composed as
``R = Rz(gamma) Ry(beta) Rx(alpha)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .core import GridSpec, Pose, rot_x, rot_y, rot_z


def _drot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(b):
    c, s = math.cos(b), math.sin(b)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drot_z(g):
    c, s = math.cos(g), math.sin(g)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class NoiseSpec:
    """Covariance of ``w`` (7x7)."""

    cov: np.ndarray

    def __post_init__(self):
        c = np.array(self.cov, dtype=np.float64)
        if c.shape != (7, 7):
            raise ValueError(f"noise covariance must be 7x7, got {c.shape}")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("noise covariance must be symmetric")
        if np.linalg.eigvalsh(c).min() < -1e-12 * max(1.0, np.abs(c).max()):
            raise ValueError("noise covariance must be positive semi-definite")
        c.flags.writeable = False
        object.__setattr__(self, "cov", c)

    @classmethod
    def from_sigmas(cls, translation=0.0, angles=0.0, range_=0.0) -> "NoiseSpec":
        """Independent noise; ``translation`` and ``angles`` may be scalars or 3-vectors."""
        t = np.broadcast_to(np.asarray(translation, dtype=np.float64), (3,))
        a = np.broadcast_to(np.asarray(angles, dtype=np.float64), (3,))
        return cls(np.diag(np.r_[t, a, range_] ** 2))

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls(np.zeros((7, 7)))


def measured_point(pose: Pose, d, l: float, w=None) -> np.ndarray:
    """``l_m R_m d + t_m`` with the noise vector ``w`` added to the pose and range."""
    w = np.zeros(7) if w is None else np.asarray(w, dtype=np.float64)
    R = rot_z(pose.yaw + w[5]) @ rot_y(pose.pitch + w[4]) @ rot_x(pose.roll + w[3])
    return (l + w[6]) * (R @ np.asarray(d, dtype=np.float64)) + pose.translation + w[:3]


def jacobian(pose: Pose, d, l: float) -> np.ndarray:
    """3x7 derivative of the measured point with respect to ``w`` at ``w = 0``."""
    d = np.asarray(d, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("ray direction must be a unit vector")
    Rx, Ry, Rz = rot_x(pose.roll), rot_y(pose.pitch), rot_z(pose.yaw)
    J = np.empty((3, 7))
    J[:, :3] = np.eye(3)
    J[:, 3] = l * (Rz @ Ry @ _drot_x(pose.roll) @ d)
    J[:, 4] = l * (Rz @ _drot_y(pose.pitch) @ Rx @ d)
    J[:, 5] = l * (_drot_z(pose.yaw) @ Ry @ Rx @ d)
    J[:, 6] = Rz @ Ry @ Rx @ d
    return J


def propagate(J: np.ndarray, cov_w) -> np.ndarray:
    cov_w = cov_w.cov if isinstance(cov_w, NoiseSpec) else np.asarray(cov_w, dtype=np.float64)
    S = J @ cov_w @ J.T
    return 0.5 * (S + S.T)


class PointUncertainty(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray


def point_uncertainty(pose: Pose, d, l: float, noise: NoiseSpec) -> PointUncertainty:
    return PointUncertainty(measured_point(pose, d, l), propagate(jacobian(pose, d, l), noise))


# -- Gaussian mass of an axis-aligned box ------------------------------------


class BoxProbability(NamedTuple):
    p: float
    stderr: float


def _factor(cov: np.ndarray, rel_tol: float = 1e-12):
    """Lower-trapezoidal factor ``C`` and row order ``perm`` with ``cov[perm][:, perm] = C C^T``."""
    lam, U = np.linalg.eigh(cov)
    top = max(float(lam.max()), 0.0)
    keep = lam > rel_tol * top if top > 0 else np.zeros(lam.shape, bool)
    if not keep.any():
        return np.zeros((cov.shape[0], 0)), np.arange(cov.shape[0])
    B = U[:, keep] * np.sqrt(lam[keep])
    # pivoted QR of B^T: B[perm] Q = R^T is lower trapezoidal
    _, R, perm = linalg.qr(B.T, mode="economic", pivoting=True)
    return R.T, perm


def box_probability(mean, cov, lower, upper, n_points: int = 4096, n_reps: int = 8,
                    seed: int | None = 0) -> BoxProbability:
    """Mass of ``N(mean, cov)`` inside ``[lower, upper]`` for PSD, possibly singular ``cov``.

    Genz's sequential conditioning maps the box to the unit cube; the
    remaining smooth integrand is averaged with randomized Sobol points, whose
    independent scrambles give the standard error. Null directions of ``cov``
    act as point masses. When the factor is diagonal the integrand is
    constant and the result is exact.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    a = np.asarray(lower, dtype=np.float64) - mean
    b = np.asarray(upper, dtype=np.float64) - mean
    C, perm = _factor(0.5 * (cov + cov.T))
    a, b = a[perm], b[perm]
    m, r = C.shape
    scale = np.abs(C).max() if C.size else 0.0
    nz = np.abs(C) > 1e-13 * max(scale, 1e-300)
    last = np.array([np.flatnonzero(nz[i]).max() if nz[i].any() else -1 for i in range(m)])
    # rows without any random part
    for i in np.flatnonzero(last < 0):
        if not (a[i] <= 0.0 <= b[i]):
            return BoxProbability(0.0, 0.0)
    if r == 0:
        return BoxProbability(1.0, 0.0)

    rows_of = [np.flatnonzero(last == k) for k in range(r)]
    dim = max(r - 1, 1)

    def integrand(u: np.ndarray) -> np.ndarray:
        n = u.shape[0]
        y = np.zeros((n, r))
        f = np.ones(n)
        for k in range(r):
            lo = np.full(n, -np.inf)
            hi = np.full(n, np.inf)
            for i in rows_of[k]:
                shift = y[:, :k] @ C[i, :k]
                c = C[i, k]
                l_i, h_i = (a[i] - shift) / c, (b[i] - shift) / c
                if c < 0:
                    l_i, h_i = h_i, l_i
                lo, hi = np.maximum(lo, l_i), np.minimum(hi, h_i)
            plo, phi = ndtr(lo), ndtr(hi)
            width = np.clip(phi - plo, 0.0, None)
            f *= width
            if k < r - 1:
                y[:, k] = ndtri(np.clip(plo + u[:, k] * width, 1e-300, 1.0 - 1e-16))
        return f

    # constant integrand (every row depends on its own variable only): one evaluation is exact
    if all(np.flatnonzero(nz[i]).size <= 1 for i in range(m)):
        return BoxProbability(float(np.clip(integrand(np.full((1, dim), 0.5))[0], 0.0, 1.0)), 0.0)

    rng = np.random.default_rng(seed)
    m_exp = max(int(math.ceil(math.log2(max(n_points, 2)))), 1)
    est = []
    for _ in range(n_reps):
        u = qmc.Sobol(dim, scramble=True, seed=rng).random_base2(m_exp)
        est.append(integrand(u).mean())
    est = np.array(est)
    se = float(est.std(ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else math.nan
    return BoxProbability(float(np.clip(est.mean(), 0.0, 1.0)), se)


def voxel_hit_probability(p_m, cov, grid: GridSpec, **kw) -> float:
    """Probability that the true point lies in the voxel containing the measured one."""
    p_m = np.asarray(p_m, dtype=np.float64)
    idx, inside = grid.indices_of(p_m[None, :])
    if not inside[0]:
        raise ValueError("measured point lies outside the grid")
    lower = grid.origin_array + idx[0] * grid.voxel_size
    return box_probability(p_m, cov, lower, lower + grid.voxel_size, **kw).p


def hit_probability_curve(noise: NoiseSpec, distances: Iterable[float], voxel_size: float = 0.25,
                          direction=(1.0, 0.0, 0.0), pose: Pose | None = None, placement: str = "centered",
                          n_offsets: int = 64, seed: int = 0, **kw) -> np.ndarray:
    """``(k, 2)`` table of ``(l, p_hit)``.

    ``placement`` fixes where the measured point sits inside its voxel:
    ``"centered"`` (voxel centered on the point, non-increasing in ``l``),
    ``"grid"`` (voxel of a grid with its origin at 0) or ``"average"`` (mean
    over uniformly random in-voxel offsets).
    """
    if placement not in ("centered", "grid", "average"):
        raise ValueError("placement must be 'centered', 'grid' or 'average'")
    pose = Pose() if pose is None else pose
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    rng = np.random.default_rng(seed)
    offsets = rng.random((n_offsets, 3)) * voxel_size
    rows = []
    for l in distances:
        mu = measured_point(pose, d, l)
        S = propagate(jacobian(pose, d, l), noise)
        if placement == "centered":
            lo = mu - voxel_size / 2
            p = box_probability(mu, S, lo, lo + voxel_size, **kw).p
        elif placement == "grid":
            lo = np.floor(mu / voxel_size) * voxel_size
            p = box_probability(mu, S, lo, lo + voxel_size, **kw).p
        else:
            p = float(np.mean([box_probability(mu, S, mu - o, mu - o + voxel_size, **kw).p for o in offsets]))
        rows.append((float(l), p))
    return np.array(rows).reshape(-1, 2)


def write_curves_csv(curves: dict[str, np.ndarray], path) -> None:
    """Long-format table ``label,distance,p``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "distance", "p"])
        for label, table in curves.items():
            for l, p in table:
                w.writerow([label, repr(float(l)), repr(float(p))])


# -- detection probability ------------------------------------------------------


def intersection_probability_single(A_P: float, l: float) -> float:
    """Chance that one ray hits a target of projected area ``A_P`` placed uniformly at distance ``l``."""
    if not l > 0:
        raise ValueError("distance must be > 0")
    if not 0 <= A_P <= 4 * math.pi * l * l:
        raise ValueError("projected area must lie in [0, 4 pi l^2]")
    return A_P / (4 * math.pi * l * l)


def cap_half_angle(a: float, l: float) -> float:
    return math.asin(min(1.0, a / l))


def detection_probability(directions, a: float, l: float, n_samples: int = 100_000,
                          seed: int | None = 0) -> BoxProbability:
    """Chance that a sphere of radius ``a`` at a uniformly random direction and
    distance ``l`` is hit by at least one ray: area of the union of spherical caps
    around the ray directions, by Monte Carlo over directions. Returns ``(p, stderr)``.
    """
    if not (a > 0 and l > 0):
        raise ValueError("a and l must be > 0")
    if a >= l:
        return BoxProbability(1.0, 0.0)
    dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    theta = cap_half_angle(a, l)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_samples, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    chord = 2.0 * math.sin(theta / 2.0)
    # the bound only prunes the search; misses come back as inf
    dist, _ = cKDTree(dirs).query(u, k=1, distance_upper_bound=chord * (1 + 1e-9) + 1e-15)
    hit = dist <= chord
    p = float(hit.mean())
    return BoxProbability(p, math.sqrt(max(p * (1 - p), 0.0) / n_samples))


def fov_fraction(vertical_fov_deg: float, theta: float = 0.0) -> float:
    """Fraction of the sphere within ``theta`` of a symmetric elevation band."""
    half = min(math.radians(vertical_fov_deg) / 2 + theta, math.pi / 2)
    return math.sin(half)

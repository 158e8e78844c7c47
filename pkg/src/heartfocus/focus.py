"""Energy fusion, centre/scale estimation and the Gaussian focus field."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMaps, compute_features, gaussian_smooth
from .tensor import EPSILON, Coord, DataError, Volume4D, exact_weighted_sum, normalize, quantile


class DegenerateFocusError(DataError):
    """The energy map carries no usable mass (all zero, or empty threshold mask)."""


@dataclass(frozen=True)
class FusionWeights:
    w_s: float = 0.1
    w_t: float = 0.9

    def __post_init__(self):
        if self.w_s < 0 or self.w_t < 0 or self.w_s + self.w_t <= 0:
            raise ValueError(f"fusion weights must be >= 0 with a positive sum, got ({self.w_s}, {self.w_t})")


@dataclass(frozen=True)
class FocusConfig:
    weights: FusionWeights = field(default_factory=FusionWeights)
    percentile: float = 0.9
    smooth_sigma: float = 5.0
    # slices are 5-10 mm apart against ~1.5 mm in-plane, so z is left unsmoothed by default
    smooth_sigma_z: float = 0.0
    scale_factor: float = 3.0
    fallback_scale: float = 1.0 / 3.0
    epsilon: float = EPSILON
    static_frame: str = "first"
    temporal_boundary: str = "periodic"
    # weight the centroid by energy inside the threshold mask only; off keeps the all-voxel centroid
    masked_center: bool = False

    def to_dict(self) -> dict:
        return {
            "weights": [self.weights.w_s, self.weights.w_t],
            "percentile": self.percentile,
            "smooth_sigma": self.smooth_sigma,
            "smooth_sigma_z": self.smooth_sigma_z,
            "scale_factor": self.scale_factor,
            "fallback_scale": self.fallback_scale,
            "epsilon": self.epsilon,
            "static_frame": self.static_frame,
            "temporal_boundary": self.temporal_boundary,
            "masked_center": self.masked_center,
        }


@dataclass(frozen=True)
class FocusResult:
    fused: np.ndarray
    energy: np.ndarray
    center: Coord
    scale: float
    mask: np.ndarray
    rbf: np.ndarray
    threshold: float
    r_max: Coord
    fallback: bool = False
    reason: str | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.energy.shape)


def rescale(a: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a flat map rescales to all zeros."""
    a64 = np.asarray(a, dtype=np.float64)
    lo, hi = a64.min(), a64.max()
    if hi == lo:
        return np.zeros(a64.shape, dtype=np.float32)
    return ((a64 - lo) / (hi - lo)).astype(np.float32)


def blend(static: np.ndarray, motion: np.ndarray, weights: FusionWeights) -> np.ndarray:
    return (weights.w_s * np.asarray(static, np.float64) + weights.w_t * np.asarray(motion, np.float64)).astype(np.float32)


def fuse(maps: FeatureMaps, weights: FusionWeights = FusionWeights()) -> np.ndarray:
    """Weighted sum of the static and motion cues.

    Each of mean, std and motion is rescaled to [0, 1] on its own; the static
    cue is the average of rescaled mean and std.
    """
    static = 0.5 * (rescale(maps.mean).astype(np.float64) + rescale(maps.std))
    return blend(static, rescale(maps.motion), weights)


def grid_rmax(shape) -> Coord:
    """Largest voxel coordinate per axis for a (z, y, x) grid, floored at 1."""
    nz, ny, nx = shape
    return Coord(float(max(nx - 1, 1)), float(max(ny - 1, 1)), float(max(nz - 1, 1)))


def energy_center(v: np.ndarray) -> Coord:
    """Energy-weighted mean voxel coordinate.

    Sums are exact rationals, so the result is correctly rounded and a
    scaled map that is exactly representable gives the identical centre.
    """
    a = np.asarray(v)
    if a.ndim != 3:
        raise DataError(f"expected a (z,y,x) map, got ndim={a.ndim}")
    if np.any(a < 0):
        raise DataError("energy map has negative values")
    total = exact_weighted_sum(a)
    if total <= 0:
        raise DegenerateFocusError("total energy is zero")
    zz, yy, xx = np.indices(a.shape, sparse=True)
    coords = []
    for grid in (xx, yy, zz):
        coords.append(float(exact_weighted_sum(a, np.broadcast_to(grid, a.shape)) / total))
    return Coord(*coords)


def threshold_mask(v: np.ndarray, p: float = 0.9) -> tuple[np.ndarray, float]:
    """Voxels strictly above the nearest-rank ``p`` quantile, and that quantile."""
    a = np.asarray(v)
    q = quantile(a, p)
    return a > q, float(q)


def scale_estimate(mask: np.ndarray, r_max: Coord, factor: float = 3.0) -> float:
    """``factor / |r_max| * cbrt(count)`` for a binary mask."""
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise DegenerateFocusError("empty threshold mask")
    return factor / math.hypot(*r_max) * count ** (1.0 / 3.0)


def rbf_distance(shape, center: Coord, r_max: Coord) -> np.ndarray:
    """Per-voxel Euclidean distance to ``center`` with each axis divided by its ``r_max``."""
    nz, ny, nx = shape
    dx = (np.arange(nx) - center.x) / r_max.x
    dy = (np.arange(ny) - center.y) / r_max.y
    dz = (np.arange(nz) - center.z) / r_max.z
    d2 = dz[:, None, None] ** 2 + dy[None, :, None] ** 2 + dx[None, None, :] ** 2
    return np.sqrt(d2)


def rbf_field(shape, center: Coord, scale: float, r_max: Coord) -> np.ndarray:
    """Gaussian focus field ``exp(-(d / scale)**2)`` over a (z, y, x) grid."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    d = rbf_distance(shape, center, r_max)
    return np.exp(-((d / scale) ** 2)).astype(np.float32)


def geometric_center(shape) -> Coord:
    nz, ny, nx = shape
    return Coord((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0)


def locate(
    energy: np.ndarray,
    config: FocusConfig = FocusConfig(),
    fused: np.ndarray | None = None,
    degenerate: str | None = None,
) -> FocusResult:
    """Threshold, centre, scale and RBF steps on an already-fused energy map.

    A non-empty ``degenerate`` reason forces the fallback centre and scale.
    """
    shape = energy.shape
    r_max = grid_rmax(shape)
    mask, thr = threshold_mask(energy, config.percentile)
    fallback, reason = bool(degenerate), degenerate or None
    if fallback:
        center, scale = geometric_center(shape), config.fallback_scale
    else:
        try:
            center = energy_center(np.where(mask, energy, 0) if config.masked_center and mask.any() else energy)
        except DegenerateFocusError as exc:
            center, fallback, reason = geometric_center(shape), True, str(exc)
        try:
            scale = scale_estimate(mask, r_max, config.scale_factor)
        except DegenerateFocusError as exc:
            scale = config.fallback_scale
            if not fallback:
                fallback, reason = True, str(exc)
    rbf = rbf_field(shape, center, scale, r_max)
    return FocusResult(
        fused=energy if fused is None else fused,
        energy=energy,
        center=center,
        scale=scale,
        mask=mask,
        rbf=rbf,
        threshold=thr,
        r_max=r_max,
        fallback=fallback,
        reason=reason,
    )


def run_focus(v: Volume4D, config: FocusConfig = FocusConfig()) -> FocusResult:
    """Full localisation: normalise, features, fuse, smooth, threshold, centre, scale, RBF.

    A map without energy does not raise; the result carries ``fallback=True``
    with the geometric centre and ``config.fallback_scale``. The same happens
    when the motion weight is positive but no voxel moves: static features
    alone cannot tell the heart from other bright tissue.
    """
    x = normalize(v, config.epsilon)
    maps = compute_features(x, config.static_frame, config.temporal_boundary)
    fused = fuse(maps, config.weights)
    s = config.smooth_sigma
    energy = gaussian_smooth(fused, (config.smooth_sigma_z, s, s)) if s > 0 or config.smooth_sigma_z > 0 else fused
    still = config.weights.w_t > 0 and not np.any(maps.motion)
    return locate(energy, config, fused=fused, degenerate="no temporal variation in the sequence" if still else None)

"""Static appearance features and temporal motion energy."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import BOUNDARY_MODES, DataError, Volume4D, _convolve, hadamard_pow

log = logging.getLogger(__name__)

# 3x3x3 box average; the leading singleton time axis of the 4D form is dropped
MEAN_KERNEL = np.full((3, 3, 3), 1.0 / 27.0)
# summing then dividing keeps constant frames exact
_BOX = np.ones((3, 3, 3))

# central-difference taps along t, applied as out[t] = I[t+1] - I[t-1]
TEMPORAL_TAPS = (-1.0, 0.0, 1.0)


@dataclass(frozen=True)
class FeatureMaps:
    mean: np.ndarray
    std: np.ndarray
    motion: np.ndarray
    frame: str = "first"
    clamped: int = 0

    def __post_init__(self):
        if not (self.mean.shape == self.std.shape == self.motion.shape):
            raise ValueError("feature maps must share dims")


def _as_frame(frame) -> np.ndarray:
    a = np.asarray(frame)
    if a.ndim != 3 or min(a.shape) < 1:
        raise DataError(f"expected a non-empty (z,y,x) frame, got shape {a.shape}")
    return a


def mean_image(frame: np.ndarray) -> np.ndarray:
    """3x3x3 windowed mean with replicated borders."""
    # _convolve skips the kernel-vs-volume size check: replicate padding is defined for any extent
    src = _as_frame(frame)
    return (_convolve(src, _BOX, "replicate") / 27.0).astype(np.result_type(src.dtype, np.float32))


def _std_image(frame: np.ndarray, mean: np.ndarray) -> tuple[np.ndarray, int]:
    frame = _as_frame(frame)
    if np.shape(mean) != frame.shape:
        raise ValueError("frame and mean differ in shape")
    dev = frame.astype(np.float64) - np.asarray(mean, dtype=np.float64)
    var = _convolve(hadamard_pow(dev, 2), _BOX, "replicate") / 27.0
    negative = var < 0
    clamped = int(negative.sum())
    if clamped:
        log.debug("clamped %d negative variance values to zero", clamped)
        var[negative] = 0.0
    return hadamard_pow(var, 0.5).astype(np.result_type(frame.dtype, np.float32)), clamped


def std_image(frame: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Square root of the windowed mean of ``(frame - mean)**2``.

    ``mean`` is normally ``mean_image(frame)``. The deviation image is formed
    voxel-wise first and only then averaged, so each neighbour contributes its
    own deviation from its own local mean.
    """
    return _std_image(frame, mean)[0]


def _temporal_difference(a: np.ndarray, boundary: str) -> np.ndarray:
    if boundary not in ("periodic", "replicate"):
        raise ValueError(f"temporal boundary must be 'periodic' or 'replicate', got {boundary!r}")
    padded = np.pad(a.astype(np.float64), [(1, 1)] + [(0, 0)] * (a.ndim - 1), mode=BOUNDARY_MODES[boundary])
    return TEMPORAL_TAPS[2] * padded[2:] + TEMPORAL_TAPS[0] * padded[:-2]


def motion_energy(v, boundary: str = "periodic") -> np.ndarray:
    """Root-mean-square temporal derivative per voxel, shape (z, y, x).

    The derivative is the (-1, 0, +1) tap pair along t; ``boundary`` decides
    how the first and last frames see their missing neighbour.
    """
    a = v.data if isinstance(v, Volume4D) else np.asarray(v)
    if a.ndim != 4:
        raise DataError(f"expected a (t,z,y,x) sequence, got ndim={a.ndim}")
    n_frames = a.shape[0]
    if n_frames < 3:
        raise DataError(f"motion energy needs at least 3 frames, got {n_frames}")
    d = _temporal_difference(a, boundary)
    energy = np.sqrt(np.einsum("t...,t...->...", d, d) / n_frames)
    return energy.astype(np.result_type(a.dtype, np.float32))


def gaussian_weights(sigma: float) -> np.ndarray:
    """Unit-sum Gaussian taps truncated at +-3 sigma."""
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(map_: np.ndarray, sigma: float | Sequence[float], boundary: str = "replicate") -> np.ndarray:
    """Separable Gaussian blur; ``sigma`` is in voxels, scalar or one per axis.

    A zero sigma leaves that axis untouched.
    """
    a = np.asarray(map_)
    sigmas = [float(sigma)] * a.ndim if np.isscalar(sigma) else [float(s) for s in sigma]
    if len(sigmas) != a.ndim:
        raise ValueError(f"need {a.ndim} sigmas, got {len(sigmas)}")
    if any(s < 0 for s in sigmas):
        raise ValueError("sigma must be non-negative")
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary policy {boundary!r}")
    out = a.astype(np.float64)
    for axis, s in enumerate(sigmas):
        if s == 0:
            continue
        w = gaussian_weights(s)
        r = w.size // 2
        pad = [(0, 0)] * a.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode=BOUNDARY_MODES[boundary])
        acc = np.zeros_like(out)
        n = out.shape[axis]
        for j, wj in enumerate(w):
            sl = [slice(None)] * a.ndim
            sl[axis] = slice(j, j + n)
            acc += wj * padded[tuple(sl)]
        out = acc
    return out.astype(np.result_type(a.dtype, np.float32))


def static_frame(v: Volume4D, which: str = "first") -> np.ndarray:
    """Frame that feeds the static features: ``first`` or ``time-mean``."""
    if which == "first":
        return v.data[0]
    if which == "time-mean":
        return v.data.astype(np.float64).mean(axis=0).astype(np.result_type(v.data.dtype, np.float32))
    raise ValueError(f"unknown static frame choice {which!r}")


def compute_features(v: Volume4D, frame: str = "first", temporal_boundary: str = "periodic") -> FeatureMaps:
    img = static_frame(v, frame)
    mean = mean_image(img)
    std, clamped = _std_image(img, mean)
    motion = motion_energy(v, temporal_boundary)
    return FeatureMaps(mean=mean, std=std, motion=motion, frame=frame, clamped=clamped)

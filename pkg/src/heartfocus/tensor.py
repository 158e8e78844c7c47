"""Dense volume containers and the small numeric kernels shared by the pipeline.

Axis order is (t, z, y, x) for sequences and (z, y, x) for single frames.
Plain ``numpy.ndarray`` objects serve as 3D maps; :class:`Volume4D` adds the
voxel spacing that travels with an acquisition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

EPSILON = 1e-7

BOUNDARY_MODES = {"replicate": "edge", "zero": "constant", "periodic": "wrap"}


class DataError(ValueError):
    """Input data is malformed or numerically unusable."""


class Coord(NamedTuple):
    """Continuous voxel coordinate, stored in (x, y, z) order."""

    x: float
    y: float
    z: float

    def as_zyx(self) -> tuple[float, float, float]:
        return (self.z, self.y, self.x)


@dataclass(frozen=True)
class Volume4D:
    """Image sequence indexed (t, z, y, x).

    ``spacing`` is (frame period, Sz, Sy, Sx); spatial entries are in mm.
    The array is made read-only on construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float, float] = field(default=(1.0, 1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise DataError(f"expected a 4D array (t,z,y,x), got ndim={data.ndim}")
        if min(data.shape) < 1:
            raise DataError(f"all extents must be >= 1, got {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 4 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise DataError(f"spacing must be four positive values, got {self.spacing}")
        if data.flags.writeable:
            data = data.view()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[1:])

    def replace(self, data: np.ndarray) -> "Volume4D":
        return Volume4D(data, self.spacing)


def _float_dtype(a: np.ndarray) -> np.dtype:
    return np.result_type(a.dtype, np.float32)


def normalize(v, epsilon: float = EPSILON):
    """Min-max scale intensities into (0, 1] with an additive ``epsilon`` guard.

    Accepts a :class:`Volume4D` or any array and returns the same kind.
    Integer input comes back as float32; float input keeps its precision.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if isinstance(v, Volume4D):
        return v.replace(normalize(v.data, epsilon))
    a = np.asarray(v)
    if a.size == 0:
        raise DataError("cannot normalize an empty volume")
    if not np.all(np.isfinite(a)):
        raise DataError("volume contains non-finite values")
    out_dtype = _float_dtype(a)
    a64 = a.astype(np.float64)
    lo = a64.min()
    hi = a64.max()
    out = (a64 - lo + epsilon) / (hi - lo + epsilon)
    return out.astype(out_dtype)


def _check_kernel(ndim: int, kernel: np.ndarray, boundary: str) -> None:
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary policy {boundary!r}; expected one of {sorted(BOUNDARY_MODES)}")
    if kernel.ndim != ndim:
        raise ValueError(f"kernel ndim {kernel.ndim} does not match volume ndim {ndim}")
    if any(n % 2 == 0 for n in kernel.shape):
        raise ValueError(f"kernel extents must be odd, got {kernel.shape}")


def _convolve(a: np.ndarray, kernel: np.ndarray, boundary: str) -> np.ndarray:
    # out[i] = sum_k kernel[k] * a[i - (k - c)], via shifted views of a padded copy
    half = [n // 2 for n in kernel.shape]
    padded = np.pad(a.astype(np.float64), [(h, h) for h in half], mode=BOUNDARY_MODES[boundary])
    acc = np.zeros(a.shape, dtype=np.float64)
    for idx in np.ndindex(*kernel.shape):
        w = kernel[idx]
        if w == 0:
            continue
        start = [2 * h - k for h, k in zip(half, idx)]
        view = padded[tuple(slice(s, s + n) for s, n in zip(start, a.shape))]
        acc += w * view
    return acc.astype(_float_dtype(a))


def convolve(v: np.ndarray, kernel: np.ndarray, boundary: str = "replicate") -> np.ndarray:
    """Convolve a 3D or 4D array with a small odd-sized kernel of equal rank.

    The output has the input's shape. ``boundary`` is one of ``replicate``,
    ``zero`` or ``periodic``. Sums are accumulated in float64.
    """
    a = np.asarray(v)
    k = np.asarray(kernel, dtype=np.float64)
    if a.ndim not in (3, 4):
        raise ValueError(f"convolve supports 3D and 4D volumes, got ndim={a.ndim}")
    _check_kernel(a.ndim, k, boundary)
    if any(kn > vn for kn, vn in zip(k.shape, a.shape)):
        raise ValueError(f"kernel {k.shape} is larger than volume {a.shape}")
    return _convolve(a, k, boundary)


def nearest_rank(p: float, n: int) -> int:
    """1-based rank ``ceil(p * n)`` used by :func:`quantile`, at least 1."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    # p*n as an exact rational avoids ceil(0.9 * 10) landing on 10
    rank = math.ceil(Fraction(str(float(p))) * n)
    return max(1, min(n, rank))


def quantile(values, p: float) -> float:
    """Nearest-rank quantile: the ``ceil(p*N)``-th smallest value (minimum at p=0)."""
    a = np.asarray(values).ravel()
    if a.size == 0:
        raise DataError("quantile of an empty collection")
    k = nearest_rank(p, a.size) - 1
    return a.dtype.type(np.partition(a, k)[k])


def hadamard_pow(v: np.ndarray, exponent: float) -> np.ndarray:
    """Element-wise power; fractional exponents reject negative bases."""
    a = np.asarray(v)
    if float(exponent) != int(exponent) and np.any(a < 0):
        raise DataError("negative base with a fractional exponent")
    if exponent == 1:
        return a.copy()
    return np.power(a.astype(_float_dtype(a)), exponent)


def exact_weighted_sum(values: np.ndarray, weights: np.ndarray | None = None) -> Fraction:
    """Exact rational value of ``sum(values * weights)``.

    ``values`` are floats, ``weights`` small non-negative integers (< 2**16).
    Mantissas are grouped by binary exponent and summed as integers, so the
    result is independent of summation order.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    w = np.ones(v.shape, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64).ravel()
    if w.shape != v.shape:
        raise ValueError("values and weights differ in size")
    if w.size and (w.min() < 0 or w.max() >= 1 << 16):
        raise ValueError("weights must lie in [0, 2**16)")
    if not np.all(np.isfinite(v)):
        raise DataError("non-finite value in weighted sum")
    frac, exp = np.frexp(v)
    mant = np.ldexp(frac, 53).astype(np.int64)
    keep = (mant != 0) & (w != 0)
    mant, exp, w = mant[keep], exp[keep] - 53, w[keep]
    if mant.size == 0:
        return Fraction(0)
    sign = np.sign(mant)
    mag = np.abs(mant)
    order = np.argsort(exp, kind="stable")
    exp, mag, sign, w = exp[order], mag[order], sign[order], w[order]
    bounds = np.flatnonzero(np.diff(exp)) + 1
    emin = int(exp[0])
    total = 0
    # three 18-bit limbs keep every partial product and group sum inside int64
    limbs = [(mag >> (18 * j)) & ((1 << 18) - 1) for j in range(3)]
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, exp.size]):
        sw = sign[lo:hi] * w[lo:hi]
        group = 0
        for j, limb in enumerate(limbs):
            group += int(np.sum(limb[lo:hi] * sw, dtype=np.int64)) << (18 * j)
        total += group << (int(exp[lo]) - emin)
    return Fraction(total) * Fraction(2) ** emin

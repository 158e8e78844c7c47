"""Turning a focus field into a crop box, and cropping/rescaling sequences to it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .focus import FocusResult
from .tensor import EPSILON, DataError, Volume4D, normalize

CATMULL_ROM_A = -0.5


@dataclass(frozen=True)
class RoiBox:
    """Half-open voxel bounds ``[lo, hi)`` in (z, y, x) order plus output (h, w)."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    source: tuple[int, int, int]
    target: tuple[int, int]

    def __post_init__(self):
        for a, (l, h, n) in enumerate(zip(self.lo, self.hi, self.source)):
            if not 0 <= l < h <= n:
                raise DataError(f"box axis {a}: need 0 <= lo < hi <= extent, got [{l}, {h}) in {n}")
        if min(self.target) < 1:
            raise DataError(f"target shape must be positive, got {self.target}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))

    def contains(self, zyx) -> bool:
        return all(l <= int(c) < h for l, h, c in zip(self.lo, self.hi, zyx))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.source, dtype=bool)
        m[self.slices] = True
        return m

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "source": list(self.source), "target": list(self.target)}

    @classmethod
    def from_dict(cls, d: dict) -> "RoiBox":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["source"]), tuple(d["target"]))


@dataclass(frozen=True)
class RoiConfig:
    k: float = 2.0
    target: tuple[int, int] | None = (128, 128)
    multiple: int = 32
    renormalize: bool = True
    epsilon: float = EPSILON

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "target": None if self.target is None else list(self.target),
            "multiple": self.multiple,
            "renormalize": self.renormalize,
            "epsilon": self.epsilon,
        }


def fit_to_multiple(shape, m: int) -> tuple[int, ...]:
    """Smallest extents >= ``shape`` that are multiples of ``m``."""
    if m < 1:
        raise ValueError(f"multiple must be >= 1, got {m}")
    return tuple(-(-int(n) // m) * m for n in shape)


def box_from_focus(f: FocusResult, k: float = 2.0, target=None, multiple: int = 32) -> RoiBox:
    """Box of half-extent ``k * scale * r_max`` per axis around the focus centre.

    ``target`` defaults to the box's in-plane shape; it is then rounded up to
    a multiple of ``multiple``.
    """
    if k <= 0:
        raise DataError(f"radius multiplier must be positive, got {k}")
    if f.scale <= 0:
        raise DataError(f"focus scale must be positive, got {f.scale}")
    source = f.shape
    lo, hi = [], []
    for c, rm, n in zip(f.center.as_zyx(), f.r_max.as_zyx(), source):
        h = k * f.scale * rm
        nearest = min(max(int(math.floor(c + 0.5)), 0), n - 1)
        a = max(min(math.floor(c - h), nearest), 0)
        b = min(max(math.floor(c + h), nearest) + 1, n)
        if b <= a:
            raise DataError(f"box collapsed to zero extent on an axis of size {n}")
        lo.append(a)
        hi.append(b)
    if target is None:
        target = (hi[1] - lo[1], hi[2] - lo[2])
    return RoiBox(tuple(lo), tuple(hi), tuple(source), fit_to_multiple(target, multiple))


def crop(v, box: RoiBox):
    """Sub-volume of every frame inside ``box``; values are copied unchanged."""
    a = v.data if isinstance(v, Volume4D) else np.asarray(v)
    if tuple(a.shape[-3:]) != tuple(box.source):
        raise DataError(f"box was built for {box.source}, volume is {a.shape[-3:]}")
    out = a[(Ellipsis,) + box.slices].copy()
    return v.replace(out) if isinstance(v, Volume4D) else out


def _keys(x: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


def cubic_matrix(n: int, m: int) -> np.ndarray:
    """(m, n) Catmull-Rom resampling operator with pixel-centre alignment.

    Taps beyond the edges are filled by linear extrapolation of the two
    outermost samples, which keeps constants and linear ramps exact.
    """
    if n < 2:
        raise DataError(f"bicubic resampling needs at least 2 source samples, got {n}")
    if m < 1:
        raise DataError(f"target extent must be positive, got {m}")
    src = (np.arange(m) + 0.5) * (n / m) - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((m, n), dtype=np.float64)
    rows = np.arange(m)
    for off in range(-1, 3):
        j = base + off
        w = _keys(src - j)
        left = j < 0
        right = j > n - 1
        inside = ~(left | right)
        np.add.at(mat, (rows[inside], j[inside]), w[inside])
        # f(j) = (1 - j) f(0) + j f(1) for j < 0
        np.add.at(mat, (rows[left], 0), w[left] * (1 - j[left]))
        np.add.at(mat, (rows[left], 1), w[left] * j[left])
        e = j[right] - (n - 1)
        np.add.at(mat, (rows[right], n - 1), w[right] * (1 + e))
        np.add.at(mat, (rows[right], n - 2), -w[right] * e)
    return mat


def resample_bicubic(frame: np.ndarray, target) -> np.ndarray:
    """Resize the last two axes of ``frame`` to ``target = (h, w)``."""
    a = np.asarray(frame)
    if a.ndim < 2:
        raise DataError("need at least a 2D slice")
    h, w = (int(t) for t in target)
    if h < 1 or w < 1:
        raise DataError(f"target extents must be positive, got {target}")
    my = cubic_matrix(a.shape[-2], h)
    mx = cubic_matrix(a.shape[-1], w)
    out = np.einsum("ij,...jk,lk->...il", my, a.astype(np.float64), mx, optimize=True)
    return out.astype(np.result_type(a.dtype, np.float32))


def resample_nearest(frame: np.ndarray, target) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes (used for label masks)."""
    a = np.asarray(frame)
    h, w = (int(t) for t in target)
    iy = np.minimum(((np.arange(h) + 0.5) * a.shape[-2] / h).astype(np.int64), a.shape[-2] - 1)
    ix = np.minimum(((np.arange(w) + 0.5) * a.shape[-1] / w).astype(np.int64), a.shape[-1] - 1)
    return a[..., iy[:, None], ix[None, :]]


def _rescaled(v: Volume4D, box: RoiBox, data: np.ndarray) -> Volume4D:
    dt, sz, sy, sx = v.spacing
    (_, bh, bw), (th, tw) = box.shape, box.target
    return Volume4D(data, (dt, sz, sy * bh / th, sx * bw / tw))


def apply_box(v: Volume4D, box: RoiBox, renormalize: bool = True, epsilon: float = EPSILON) -> Volume4D:
    """Crop to ``box``, bicubic-resize in-plane when the target differs, optionally renormalise."""
    data = crop(v, box).data
    if tuple(box.target) != tuple(box.shape[1:]):
        if min(box.shape[1:]) < 2:
            raise DataError(f"box in-plane shape {box.shape[1:]} too small to resample")
        data = resample_bicubic(data, box.target)
    if renormalize:
        data = normalize(data, epsilon)
    return _rescaled(v, box, data)


def extract_roi(v: Volume4D, f: FocusResult, cfg: RoiConfig = RoiConfig()) -> tuple[Volume4D, RoiBox]:
    """Crop every frame to the focus box, rescale in-plane, then renormalise.

    The z axis is cropped but never resampled.
    """
    box = box_from_focus(f, cfg.k, cfg.target, cfg.multiple)
    return apply_box(v, box, cfg.renormalize, cfg.epsilon), box


def extract_labels(labels: np.ndarray, box: RoiBox) -> np.ndarray:
    """Crop and nearest-resize a (t, z, y, x) label array to match :func:`extract_roi`."""
    cropped = crop(np.asarray(labels), box)
    if tuple(box.target) != tuple(box.shape[1:]):
        cropped = resample_nearest(cropped, box.target)
    return cropped

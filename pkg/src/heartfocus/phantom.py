"""Synthetic beating left-ventricle phantom with exact myocardium masks.

The ventricle is a ring per short-axis slice: blood pool inside the inner
radius, myocardium between inner and outer radius, flat background outside.
Radii follow a cosine cycle from diastole (t=0) to systole (t=T/2) and shrink
linearly toward the apex (high z).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .tensor import Coord, DataError, Volume4D

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int, int] = (12, 8, 64, 64)
    center: Coord = Coord(32.0, 32.0, 4.0)
    inner_diastole: float = 9.0
    outer_diastole: float = 14.0
    inner_systole: float = 5.0
    outer_systole: float = 12.0
    # relative radius change per slice height, positive = smaller toward apex
    taper: float = 0.3
    blood: float = 0.9
    myocardium: float = 0.5
    background: float = 0.15
    noise: float = 0.02
    seed: int = 0
    spacing: tuple[float, float, float, float] = field(default=(1.0, 8.0, 1.5, 1.5))

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "center", Coord(*(float(c) for c in self.center)))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        t, z, h, w = self.dims
        if t < 4 or min(z, h, w) < 1:
            raise DataError(f"phantom needs T >= 4 and positive extents, got {self.dims}")
        half = min(h, w) / 2
        for inner, outer, phase in (
            (self.inner_diastole, self.outer_diastole, "diastole"),
            (self.inner_systole, self.outer_systole, "systole"),
        ):
            if not 0 < inner < outer < half:
                raise DataError(f"{phase} radii must satisfy 0 < inner < outer < {half}, got {inner}, {outer}")
        if self.inner_systole > self.inner_diastole or self.outer_systole > self.outer_diastole:
            raise DataError("systolic radii must not exceed diastolic radii")
        if self.noise < 0:
            raise DataError("noise amplitude must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        d["dims"] = list(self.dims)
        d["spacing"] = list(self.spacing)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown phantom spec keys: {sorted(unknown)}")
        kw = dict(d)
        if "center" in kw:
            kw["center"] = Coord(*kw["center"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "PhantomSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PhantomOutput:
    volume: Volume4D
    mask: np.ndarray
    center: Coord


def _mix(h: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def hashed_uniform(seed: int, t: int, shape) -> np.ndarray:
    """Uniform [-1, 1) noise for frame ``t``, keyed per voxel by (seed, t, z, y, x)."""
    z, y, x = np.indices(shape, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(t))
        for c in (z, y, x):
            h = _mix((h + _GOLDEN) ^ c)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-52 - 1.0


def radii(spec: PhantomSpec, t: int, z: int) -> tuple[float, float]:
    """Inner and outer ring radius of slice ``z`` at frame ``t``."""
    n_t, n_z = spec.dims[:2]
    phase = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / n_t))
    inner = spec.inner_diastole + (spec.inner_systole - spec.inner_diastole) * phase
    outer = spec.outer_diastole + (spec.outer_systole - spec.outer_diastole) * phase
    f = 1.0 - spec.taper * (z - spec.center.z) / max(n_z - 1, 1)
    return float(inner * f), float(outer * f)


def ring_masks(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (t, z, y, x) myocardium and blood-pool masks."""
    n_t, n_z, h, w = spec.dims
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(xx - spec.center.x, yy - spec.center.y)
    myo = np.zeros(spec.dims, dtype=bool)
    pool = np.zeros(spec.dims, dtype=bool)
    for t in range(n_t):
        for z in range(n_z):
            inner, outer = radii(spec, t, z)
            pool[t, z] = dist <= inner
            myo[t, z] = (dist > inner) & (dist <= outer)
    return myo, pool


def generate(spec: PhantomSpec = PhantomSpec()) -> PhantomOutput:
    myo, pool = ring_masks(spec)
    data = np.full(spec.dims, spec.background, dtype=np.float64)
    data[myo] = spec.myocardium
    data[pool] = spec.blood
    if spec.noise > 0:
        for t in range(spec.dims[0]):
            data[t] += spec.noise * hashed_uniform(spec.seed, t, spec.dims[1:])
    return PhantomOutput(Volume4D(data.astype(np.float32), spec.spacing), myo, spec.center)

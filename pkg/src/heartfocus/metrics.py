"""Overlap metrics, McNemar's test, timing and the label-size filter."""
from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .tensor import DataError, Volume4D, nearest_rank


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class EvalReport:
    recall: float
    dice: float
    counts: ConfusionCounts
    mcnemar_chi2: float | None = None
    base_time: float | None = None
    ours_time: float | None = None
    speedup: float | None = None
    slices_total: int = 0
    slices_kept: int = 0
    empty_label: bool = False
    both_empty: bool = False
    box_recall: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = asdict(self.counts)
        return d

    def to_text(self) -> str:
        """One ``key=value`` per line, counts flattened, ``none`` for missing values."""
        flat = {k: v for k, v in self.to_dict().items() if k != "counts"}
        flat.update(self.to_dict()["counts"])
        lines = []
        for key in sorted(flat):
            val = flat[key]
            if val is None:
                val = "none"
            elif isinstance(val, bool):
                val = str(val).lower()
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y, dtype=bool)
    b = np.asarray(y_hat, dtype=bool)
    if a.shape != b.shape:
        raise DataError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def confusion(y, y_hat) -> ConfusionCounts:
    a, b = _pair(y, y_hat)
    tp = int(np.count_nonzero(a & b))
    fp = int(np.count_nonzero(~a & b))
    fn = int(np.count_nonzero(a & ~b))
    return ConfusionCounts(tp, fp, fn, a.size - tp - fp - fn)


def recall(label, predicted_region) -> float:
    """Share of label voxels inside the prediction; 1.0 for an empty label."""
    a, b = _pair(label, predicted_region)
    n = int(np.count_nonzero(a))
    if n == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / n


def dice(y, y_hat) -> float:
    """Dice overlap; two empty masks score 1.0."""
    a, b = _pair(y, y_hat)
    denom = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if denom == 0:
        return 1.0
    return 2 * int(np.count_nonzero(a & b)) / denom


def mcnemar_corrected(b: int, c: int) -> float:
    """Continuity-corrected McNemar statistic from the two discordant cell counts."""
    if b < 0 or c < 0:
        raise ValueError("counts must be non-negative")
    if b + c == 0:
        raise DataError("McNemar statistic undefined without discordant pairs")
    return (abs(b - c) - 1) ** 2 / (b + c)


def discordant_pairs(label, base_pred, ours_pred) -> tuple[int, int]:
    """(base right & ours wrong, base wrong & ours right) voxel counts."""
    y, p0 = _pair(label, base_pred)
    _, p1 = _pair(label, ours_pred)
    base_ok = p0 == y
    ours_ok = p1 == y
    return int(np.count_nonzero(base_ok & ~ours_ok)), int(np.count_nonzero(~base_ok & ours_ok))


def speedup(base_time: float, ours_time: float) -> float:
    if base_time <= 0 or ours_time <= 0:
        raise ValueError("times must be positive")
    return base_time / ours_time


def filter_slices(labels, min_pixels: int = 25) -> list[int]:
    """Indices of 2D label slices with at least ``min_pixels`` marked pixels.

    ``labels`` is a sequence of 2D masks or an array whose last two axes are
    in-plane; leading axes are flattened in C order.
    """
    if min_pixels < 0:
        raise ValueError("min_pixels must be >= 0")
    if isinstance(labels, np.ndarray):
        flat = labels.reshape((-1,) + labels.shape[-2:])
        counts = np.count_nonzero(flat, axis=(1, 2))
    else:
        counts = [int(np.count_nonzero(s)) for s in labels]
    return [i for i, n in enumerate(counts) if n >= min_pixels]


def threshold_segmenter(roi, p: float = 0.7) -> np.ndarray:
    """Per-slice masks of pixels strictly above the slice's nearest-rank ``p`` quantile.

    Stand-in segmentation backend. Works on any array whose last two axes
    are in-plane.
    """
    a = roi.data if isinstance(roi, Volume4D) else np.asarray(roi)
    flat = a.reshape((-1, a.shape[-2] * a.shape[-1]))
    k = nearest_rank(p, flat.shape[1]) - 1
    q = np.partition(flat, k, axis=1)[:, k : k + 1]
    return (flat > q).reshape(a.shape)


def median_time(fn: Callable[[], object], repeats: int = 3) -> float:
    """Median wall-clock seconds of ``repeats`` calls to ``fn``."""
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def evaluate(label, pred, min_pixels: int = 25, base_pred=None) -> EvalReport:
    """Score ``pred`` against ``label`` over slices that pass :func:`filter_slices`.

    With ``base_pred`` the McNemar statistic compares base and ``pred``
    voxel-wise on the same retained slices.
    """
    y, p = _pair(label, pred)
    ys = y.reshape((-1,) + y.shape[-2:])
    ps = p.reshape((-1,) + p.shape[-2:])
    keep = filter_slices(ys, min_pixels)
    ys, ps = ys[keep], ps[keep]
    chi2 = None
    if base_pred is not None:
        _, b0 = _pair(label, base_pred)
        b0 = b0.reshape((-1,) + b0.shape[-2:])[keep]
        b, c = discordant_pairs(ys, b0, ps)
        chi2 = mcnemar_corrected(b, c) if b + c else None
    n_y, n_p = int(np.count_nonzero(ys)), int(np.count_nonzero(ps))
    return EvalReport(
        recall=recall(ys, ps),
        dice=dice(ys, ps),
        counts=confusion(ys, ps),
        mcnemar_chi2=chi2,
        slices_total=int(y.reshape((-1,) + y.shape[-2:]).shape[0]),
        slices_kept=len(keep),
        empty_label=n_y == 0,
        both_empty=n_y == 0 and n_p == 0,
    )

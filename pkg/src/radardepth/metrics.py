"""Depth evaluation metrics over range buckets.

Units follow the usual radar-camera benchmark tables: MAE/RMSE in mm,
iMAE/iRMSE in 1/km, SqRel as mean((p - g)^2 / g) with both in metres,
multiplied by 1000.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, UndefinedMetricsError
from .geometry import DepthImage

M_TO_MM = 1000.0
INV_M_TO_INV_KM = 1000.0
SQREL_SCALE = 1000.0
DELTA1_THRESHOLD = 1.25
DEFAULT_RANGES = (50.0, 60.0, 70.0)

# column order of the benchmark tables
TABLE_COLUMNS = ("imae", "irmse", "mae", "rmse", "absrel", "sqrel", "delta1")


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    imae: float
    irmse: float
    absrel: float
    sqrel: float
    delta1: float
    n_pixels: int
    range_cap: float
    coverage: float

    def to_dict(self):
        return asdict(self)

    def table_row(self):
        return [getattr(self, k) for k in TABLE_COLUMNS]


def compute_metrics(pred: DepthImage, gt: DepthImage, range_cap: float = DEFAULT_RANGES[0]) -> MetricsReport:
    """Seven standard depth metrics on pixels with ``0 < gt <= range_cap``.

    Pixels where the prediction is invalid are excluded; ``coverage`` is the
    fraction of in-range ground-truth pixels that had a prediction.
    """
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if not range_cap > 0:
        raise ParameterError("range_cap must be positive")
    with np.errstate(invalid="ignore"):
        in_range = gt.mask & (gt.values <= range_cap)
    sel = in_range & pred.mask
    n = int(sel.sum())
    if n == 0:
        raise UndefinedMetricsError(f"no evaluable pixel within {range_cap} m")
    p = pred.values[sel]
    g = gt.values[sel]
    err = p - g
    ierr = 1.0 / p - 1.0 / g
    ratio = np.maximum(p / g, g / p)
    return MetricsReport(
        mae=float(np.mean(np.abs(err))) * M_TO_MM,
        rmse=float(np.sqrt(np.mean(err**2))) * M_TO_MM,
        imae=float(np.mean(np.abs(ierr))) * INV_M_TO_INV_KM,
        irmse=float(np.sqrt(np.mean(ierr**2))) * INV_M_TO_INV_KM,
        absrel=float(np.mean(np.abs(err) / g)),
        sqrel=float(np.mean(err**2 / g)) * SQREL_SCALE,
        delta1=float(np.mean(ratio < DELTA1_THRESHOLD)),
        n_pixels=n,
        range_cap=float(range_cap),
        coverage=n / int(in_range.sum()),
    )


def metrics_by_range(pred: DepthImage, gt: DepthImage, ranges=DEFAULT_RANGES):
    return [compute_metrics(pred, gt, r) for r in ranges]

"""Error metrics for fitness and reporting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise ValueError("empty input")
    return a, p


def mse(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    if not np.all(np.isfinite(p)):
        return math.inf
    with np.errstate(over="ignore"):
        return float(np.mean((a - p) ** 2))


def mae(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    if not np.all(np.isfinite(p)):
        return math.inf
    return float(np.mean(np.abs(a - p)))


def nmae(actual, predicted) -> float:
    """MAE over the range of the actual values, in percent."""
    a, p = _pair(actual, predicted)
    span = float(a.max() - a.min())
    if span <= 0.0:
        raise ValueError("zero range: all actual values are equal")
    return mae(a, p) / span * 100.0


@dataclass(frozen=True)
class MetricReport:
    mse: float
    mae: float
    nmae_percent: float
    n: int
    y_range: float

    def as_dict(self) -> dict:
        return asdict(self)


def report(actual, predicted) -> MetricReport:
    """All three metrics at once.

    Unlike :func:`nmae`, a zero-range target is tolerated here: the NMAE is
    reported as 0 for a perfect fit and inf otherwise.
    """
    a, p = _pair(actual, predicted)
    span = float(a.max() - a.min())
    err_mse = mse(a, p)
    err_mae = mae(a, p)
    if span > 0.0:
        pct = err_mae / span * 100.0
    else:
        pct = 0.0 if err_mae == 0.0 else math.inf
    return MetricReport(err_mse, err_mae, pct, int(a.size), span)

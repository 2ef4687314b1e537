"""Bjontegaard delta metrics between two rate-distortion curves.

``bd_rate`` and ``bd_quality`` use the classic cubic fits. The ``*_piecewise``
variants integrate straight-line interpolants on a fine grid and serve as an
independent cross-check of the cubic results.
"""

from __future__ import annotations

import numpy as np

from .metrics import RDCurve

MIN_POINTS = 4


class NoOverlapError(ValueError):
    pass


def _prepare(anchor: RDCurve, test: RDCurve, metric: str, min_points: int = MIN_POINTS):
    for name, curve in (("anchor", anchor), ("test", test)):
        if len(curve.points) < min_points:
            raise ValueError(f"{name} curve needs at least {min_points} points, has {len(curve.points)}")
    r1, q1 = np.log10(anchor.rates()), anchor.qualities(metric)
    r2, q2 = np.log10(test.rates()), test.qualities(metric)
    if not (np.isfinite(q1).all() and np.isfinite(q2).all()):
        raise ValueError("quality values must be finite")
    return r1, q1, r2, q2


def _overlap(a: np.ndarray, b: np.ndarray, what: str) -> tuple[float, float]:
    lo = max(a.min(), b.min())
    hi = min(a.max(), b.max())
    if not hi > lo:
        raise NoOverlapError(f"curves do not overlap in {what}")
    return lo, hi


def _poly_mean(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    p = np.polyint(np.polyfit(x, y, 3))
    return (np.polyval(p, hi) - np.polyval(p, lo)) / (hi - lo)


def bd_rate(anchor: RDCurve, test: RDCurve, metric: str = "psnr") -> float:
    """Average rate difference of ``test`` vs ``anchor`` at equal quality, in percent."""
    r1, q1, r2, q2 = _prepare(anchor, test, metric)
    lo, hi = _overlap(q1, q2, "quality")
    diff = _poly_mean(q2, r2, lo, hi) - _poly_mean(q1, r1, lo, hi)
    return (10.0**diff - 1.0) * 100.0


def bd_quality(anchor: RDCurve, test: RDCurve, metric: str = "psnr") -> float:
    """Average quality difference of ``test`` vs ``anchor`` at equal rate (dB)."""
    r1, q1, r2, q2 = _prepare(anchor, test, metric)
    lo, hi = _overlap(r1, r2, "log-rate")
    return _poly_mean(r2, q2, lo, hi) - _poly_mean(r1, q1, lo, hi)


def _linear_mean(x: np.ndarray, y: np.ndarray, lo: float, hi: float, samples: int) -> float:
    order = np.argsort(x)
    grid = np.linspace(lo, hi, samples)
    vals = np.interp(grid, x[order], y[order])
    return float(np.sum((vals[1:] + vals[:-1]) * 0.5 * np.diff(grid)) / (hi - lo))


def bd_rate_piecewise(anchor: RDCurve, test: RDCurve, metric: str = "psnr", samples: int = 10001) -> float:
    r1, q1, r2, q2 = _prepare(anchor, test, metric, min_points=2)
    lo, hi = _overlap(q1, q2, "quality")
    diff = _linear_mean(q2, r2, lo, hi, samples) - _linear_mean(q1, r1, lo, hi, samples)
    return (10.0**diff - 1.0) * 100.0


def bd_quality_piecewise(anchor: RDCurve, test: RDCurve, metric: str = "psnr", samples: int = 10001) -> float:
    r1, q1, r2, q2 = _prepare(anchor, test, metric, min_points=2)
    lo, hi = _overlap(r1, r2, "log-rate")
    return _linear_mean(r2, q2, lo, hi, samples) - _linear_mean(r1, q1, lo, hi, samples)


def quality_at_rate(curve: RDCurve, rate: float, metric: str = "psnr") -> float:
    """Quality of ``curve`` at ``rate``: linear in log-rate, extrapolated at the ends."""
    x = np.log10(curve.rates())
    y = curve.qualities(metric)
    if len(x) == 1:
        return float(y[0])
    t = np.log10(rate)
    if t <= x[0]:
        i = 0
    elif t >= x[-1]:
        i = len(x) - 2
    else:
        i = int(np.searchsorted(x, t)) - 1
    slope = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
    return float(y[i] + slope * (t - x[i]))

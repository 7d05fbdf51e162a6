"""
Number utility functions for the lab
Tolerance comparisons, regression fits and Monte Carlo error bars
"""

import math

import numpy as np
from scipy import stats

from backend.core.config import settings

# ============================================================
# TOLERANCE-BASED COMPARISONS
# ============================================================

TOLERANCE = settings.A2LAB_SLACK_TOL


def approx_le(a: float, b: float, tol: float = TOLERANCE) -> bool:
    """
    Check a <= b up to a tolerance relative to the magnitudes involved.
    """
    return float(a) <= float(b) + tol * max(1.0, abs(float(a)), abs(float(b)))


def slack(rhs: np.ndarray | float, lhs: np.ndarray | float) -> float:
    """
    Worst (smallest) value of rhs - lhs, scaled by the magnitudes involved.
    Negative beyond -TOLERANCE means the inequality lhs <= rhs failed.
    """
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    if rhs.size == 0:
        return math.inf
    scale = np.maximum(1.0, np.maximum(np.abs(rhs), np.abs(lhs)))
    return float(np.min((rhs - lhs) / scale))


# ============================================================
# FITS
# ============================================================


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """
    Least-squares slope of log y against log x over the positive pairs.
    Returns 0.0 when x has no spread and nan when fewer than two usable points remain.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if np.ptp(lx) < 1e-12:
        return 0.0
    return float(stats.linregress(lx, ly).slope)


def linear_slope(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) < 1e-12:
        return math.nan
    return float(stats.linregress(x, y).slope)


# ============================================================
# MONTE CARLO ERROR BARS
# ============================================================


def binomial_stderr(frequency: float, trials: int) -> float:
    if trials <= 0:
        return math.nan
    return math.sqrt(max(frequency * (1.0 - frequency), 0.0) / trials)


def ratio_estimate(numerators: np.ndarray, denominators: np.ndarray) -> tuple[float, float]:
    """
    Pooled ratio sum(c)/sum(n) over trials with its delta-method standard error.
    """
    c = np.asarray(numerators, dtype=float)
    n = np.asarray(denominators, dtype=float)
    total = n.sum()
    if total <= 0:
        return math.nan, math.nan
    ratio = c.sum() / total
    trials = c.size
    if trials < 2:
        return float(ratio), math.nan
    residual = c - ratio * n
    stderr = math.sqrt(residual.var(ddof=1) / trials) / n.mean()
    return float(ratio), float(stderr)

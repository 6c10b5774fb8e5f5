"""
Cross-run statistics: mean with t-based 95% confidence half-width, trailing means
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats


def mean_ci95(values: Sequence[float]) -> Tuple[float, Optional[float]]:
    """
    Mean and 95% CI half-width t_{0.975, n-1} * s / sqrt(n).
    The half-width is None for fewer than two values.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_ci95 needs at least one value")
    mean = float(np.mean(arr))
    if arr.size < 2:
        return mean, None
    s = float(np.std(arr, ddof=1))
    return mean, float(stats.t.ppf(0.975, arr.size - 1) * s / np.sqrt(arr.size))


def trailing_mean(series: Sequence[float], window: int) -> np.ndarray:
    """Mean of the last `window` points up to each index; shorter at the start"""
    arr = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise ValueError(f"window must be positive, got {window}")
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    idx = np.arange(1, arr.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def final_window_mean(series: Sequence[float], window: int) -> float:
    """Mean over the last `window` entries (all of them if fewer)"""
    arr = np.asarray(series, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty series")
    return float(np.mean(arr[-window:]))


def normalized_improvement(score: float, baseline: float) -> Optional[float]:
    """
    (score - baseline) / |baseline|: 0.2 means 20% of the baseline's magnitude better.
    None for a zero baseline.
    """
    if baseline == 0.0:
        return None
    return float((score - baseline) / abs(baseline))

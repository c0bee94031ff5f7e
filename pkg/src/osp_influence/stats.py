"""Confidence intervals for steady-state simulation output."""

import numpy as np
from scipy.stats import t

CONFIDENCE = 0.95


def confidence_interval(
    samples: np.ndarray, confidence: float = CONFIDENCE
) -> tuple[np.ndarray, np.ndarray]:
    """
    Mean and Student-t half-width along the first axis.

    ``samples`` stacks one observation per batch (or replication) on axis 0;
    any trailing shape is kept, so a stack of N x N matrices gives N x N
    means and half-widths. Fewer than two observations give NaN half-widths.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    s = samples.std(axis=0, ddof=1)
    tcrit = float(t.ppf(1.0 - (1.0 - confidence) / 2.0, df=n - 1))
    return mean, tcrit * s / np.sqrt(n)


def batch_bounds(n_events: int, n_batches: int) -> list[int]:
    """Event offsets where each batch starts; the last batch takes the remainder."""
    size = n_events // n_batches
    return [b * size for b in range(n_batches)]


def overlap(
    a: np.ndarray, a_half: np.ndarray, b: np.ndarray, b_half: np.ndarray
) -> np.ndarray:
    """Entrywise: do the two intervals agree within their combined half-widths."""
    return np.abs(np.asarray(a) - np.asarray(b)) <= np.asarray(a_half) + np.asarray(b_half)

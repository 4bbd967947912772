"""Histogram-based foreground/background threshold selection.

All four methods answer the same question: above which value does a pixel
of an importance map count as foreground?  ``mean`` works on the raw
values; Otsu, triangle, and Li work on a 256-bin histogram.  Binarization
uses the >= convention, so a pixel exactly at the threshold is foreground.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .tensors import DEFAULT_BINS, BinaryMask, Histogram, ScalarMap, as_scalar_map, histogram


class ThresholdMethod(str, Enum):
    MEAN = "mean"
    OTSU = "otsu"
    TRIANGLE = "triangle"
    LI = "li"


DEFAULT_METHOD = ThresholdMethod.MEAN

LI_MAX_ITER = 100


@dataclass(frozen=True)
class ThresholdResult:
    """A selected threshold plus the flags downstream bookkeeping needs."""

    value: float
    degenerate: bool = False
    converged: bool = True


def _degenerate_fallback(h: Histogram) -> float:
    """Center of the single occupied bin of a degenerate histogram."""
    occupied = np.flatnonzero(h.counts)
    if len(occupied) != 1:
        raise ValidationError("fallback requires exactly one occupied bin")
    return float(h.bin_centers()[occupied[0]])


def threshold_mean(values) -> float:
    """Arithmetic mean of all values (operates on the raw map, not a histogram)."""
    return float(np.mean(as_scalar_map(np.atleast_2d(values))))


def threshold_otsu(h: Histogram) -> float:
    """Bin edge maximizing the between-class variance w0*w1*(mu0-mu1)^2.

    Ties break toward the lower threshold.  A degenerate histogram falls
    back to the center of its single occupied bin.
    """
    if h.degenerate:
        return _degenerate_fallback(h)
    counts = h.counts.astype(np.float64)
    centers = h.bin_centers()
    # Candidate t splits bins [0, t) from [t, B); t ranges over interior edges.
    w0 = np.cumsum(counts)[:-1]
    w1 = counts.sum() - w0
    s0 = np.cumsum(counts * centers)[:-1]
    s1 = np.sum(counts * centers) - s0
    crit = np.zeros(h.num_bins - 1)
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.divide(s0, w0, out=np.zeros_like(s0), where=valid)
    mu1 = np.divide(s1, w1, out=np.zeros_like(s1), where=valid)
    crit[valid] = (w0 * w1)[valid] * (mu0 - mu1)[valid] ** 2
    t = int(np.argmax(crit)) + 1
    return float(h.bin_edges[t])


def threshold_triangle(h: Histogram) -> float:
    """Lower edge of the bin farthest (perpendicular) from the peak-tail line.

    The line runs from the histogram peak to the farthest nonzero bin; when
    both tails are equidistant the lower one is used, and distance ties
    break toward the lower bin.
    """
    if h.degenerate:
        return _degenerate_fallback(h)
    counts = h.counts.astype(np.float64)
    peak = int(np.argmax(counts))
    nonzero = np.flatnonzero(counts)
    first_nz, last_nz = int(nonzero[0]), int(nonzero[-1])
    far = first_nz if (peak - first_nz) >= (last_nz - peak) else last_nz
    lo, hi = min(peak, far), max(peak, far)
    idx = np.arange(lo, hi + 1)
    # Perpendicular distance to the peak->far line, up to a constant factor.
    dx, dy = far - peak, counts[far] - counts[peak]
    dist = np.abs(dy * (idx - peak) - dx * (counts[idx] - counts[peak]))
    best = int(idx[np.argmax(dist)])
    return float(h.bin_edges[best])


def threshold_li(h: Histogram, max_iter: int = LI_MAX_ITER, full_output: bool = False):
    """Minimum-cross-entropy threshold via the iterative fixed point
    tau <- (mu_below - mu_above) / (ln mu_below - ln mu_above).

    Starts at the histogram mean and stops when the update moves less than
    half a bin width.  Values are shifted to non-negative support internally
    when the histogram extends below zero (the shift is undone on return).
    With ``full_output`` the convergence flag is returned as well.
    """
    if h.degenerate:
        tau = _degenerate_fallback(h)
        return (tau, True) if full_output else tau
    counts = h.counts.astype(np.float64)
    shift = -float(h.bin_edges[0]) if h.bin_edges[0] < 0 else 0.0
    centers = h.bin_centers() + shift
    tol = 0.5 * h.bin_width
    tau = float(np.average(centers, weights=counts))
    converged = False
    for _ in range(max_iter):
        below = centers < tau
        mass0 = counts[below].sum()
        mass1 = counts[~below].sum()
        if mass0 == 0 or mass1 == 0:
            converged = True  # one-sided split: the update map has no move left
            break
        mu0 = float(np.average(centers[below], weights=counts[below]))
        mu1 = float(np.average(centers[~below], weights=counts[~below]))
        new = (mu0 - mu1) / (np.log(mu0) - np.log(mu1))
        done = abs(new - tau) < tol
        tau = new
        if done:
            converged = True
            break
    tau -= shift
    return (tau, converged) if full_output else tau


def binarize(map_, tau: float) -> BinaryMask:
    """Indicator mask: 1 where the map value is >= tau, else 0."""
    arr = as_scalar_map(map_)
    if not np.isfinite(tau):
        raise ValidationError("threshold must be finite")
    return (arr >= tau).astype(np.uint8)


def select_threshold(values, method: ThresholdMethod | str, bins: int = DEFAULT_BINS) -> ThresholdResult:
    """Pick a threshold for a map with the given method, carrying flags.

    Histogram methods report degeneracy (zero-range map) and, for Li,
    non-convergence; the mean method never degenerates.
    """
    method = ThresholdMethod(method)
    arr = as_scalar_map(np.atleast_2d(values))
    if method is ThresholdMethod.MEAN:
        return ThresholdResult(value=threshold_mean(arr))
    h = histogram(arr.ravel(), bins=bins)
    if method is ThresholdMethod.OTSU:
        return ThresholdResult(value=threshold_otsu(h), degenerate=h.degenerate)
    if method is ThresholdMethod.TRIANGLE:
        return ThresholdResult(value=threshold_triangle(h), degenerate=h.degenerate)
    tau, converged = threshold_li(h, full_output=True)
    return ThresholdResult(value=tau, degenerate=h.degenerate, converged=converged)

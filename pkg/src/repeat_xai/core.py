"""The repeated-thresholding importance estimator.

Each pixel is treated as a Bernoulli variable: across K stochastic base
maps, a pixel is "important" in realization k when its base score clears
that realization's threshold.  The importance estimate is a weighted mean
of the indicators (weights are the base scores max-normalized per
realization) and the uncertainty is the Bernoulli variance p*(1-p).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import seeds
from .base_methods import MaskConfig, ShapConfig, kernel_shap_importance, relax_importance
from .encoders import EncoderHandle
from .errors import DegenerateRunError, ValidationError
from .tensors import BinaryMask, ImageTensor, ScalarMap, as_binary_mask, as_scalar_map
from .thresholds import ThresholdMethod, binarize, select_threshold

_BASE_ALIASES = {"relax": "relax", "kernel-shap": "kernel-shap", "shap": "kernel-shap"}


@dataclass(frozen=True)
class RepeatConfig:
    """Estimator settings: realization count, base method, threshold, seed."""

    k: int = 10
    base: str = "relax"
    threshold: ThresholdMethod = ThresholdMethod.MEAN
    seed: int = 0
    masks: MaskConfig = field(default_factory=MaskConfig)
    shap: ShapConfig = field(default_factory=ShapConfig)

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}")
        if self.base not in _BASE_ALIASES:
            raise ValidationError(f"base must be 'relax' or 'kernel-shap', got {self.base!r}")
        object.__setattr__(self, "base", _BASE_ALIASES[self.base])
        object.__setattr__(self, "threshold", ThresholdMethod(self.threshold))


@dataclass(frozen=True)
class RealizationFlags:
    """Degeneracy bookkeeping for one realization."""

    threshold_degenerate: bool = False
    threshold_nonconverged: bool = False
    weights_degenerate: bool = False

    @property
    def degenerate(self) -> bool:
        return self.threshold_degenerate or self.weights_degenerate


@dataclass(frozen=True)
class RepeatResult:
    """Estimator output: importance p in [0,1], uncertainty p*(1-p), plus the
    per-realization indicators, weight maps, thresholds, and flags."""

    importance: ScalarMap
    uncertainty: ScalarMap
    realizations: np.ndarray  # (K, H, W) uint8
    weights: np.ndarray  # (K, H, W) float64
    thresholds: tuple[float, ...]
    flags: tuple[RealizationFlags, ...]

    def __post_init__(self):
        for name in ("importance", "uncertainty", "realizations", "weights"):
            getattr(self, name).setflags(write=False)


def weight_map(base) -> ScalarMap:
    """Base scores clipped at 0 and scaled by their maximum, into [0, 1].

    A realization with no positive score yields the all-zero weight map
    (that pixel set can never be important this realization).
    """
    clipped = np.maximum(as_scalar_map(base), 0.0)
    top = clipped.max()
    if top <= 0.0:
        return np.zeros_like(clipped)
    return clipped / top


def bernoulli_sample(base, method: ThresholdMethod | str) -> tuple[BinaryMask, float]:
    """Threshold one base map into an indicator mask; returns (mask, tau)."""
    res = select_threshold(base, method)
    return binarize(base, res.value), res.value


def aggregate(indicators, weights) -> ScalarMap:
    """Weighted sample mean p = (1/K) sum_k I(k) * W(k), elementwise in [0,1]."""
    inds = np.stack([as_binary_mask(i) for i in indicators]).astype(np.float64)
    ws = np.stack([as_scalar_map(w) for w in weights])
    if inds.shape != ws.shape:
        raise ValidationError(f"indicator/weight shapes differ: {inds.shape} vs {ws.shape}")
    if len(inds) < 2:
        raise ValidationError(f"need at least 2 realizations, got {len(inds)}")
    if ws.min() < 0.0 or ws.max() > 1.0:
        raise ValidationError("weights must lie in [0, 1]")
    # The mean is in [0,1] in exact arithmetic; clip strips any 1-ulp spill.
    return np.clip((inds * ws).mean(axis=0), 0.0, 1.0)


def bernoulli_uncertainty(importance) -> ScalarMap:
    """Bernoulli variance p*(1-p); zero exactly where p is 0 or 1."""
    p = as_scalar_map(importance)
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValidationError("importance must lie in [0, 1]")
    return p * (1.0 - p)


def _base_fn(enc: EncoderHandle, cfg: RepeatConfig) -> Callable[[ImageTensor, int], ScalarMap]:
    if cfg.base == "relax":
        return lambda img, s: relax_importance(img, enc, cfg.masks, s)
    return lambda img, s: kernel_shap_importance(img, enc, cfg.shap, s)


def repeat_explain(
    x: ImageTensor,
    enc: EncoderHandle,
    cfg: RepeatConfig,
    base_fn: Callable[[ImageTensor, int], ScalarMap] | None = None,
    threads: int = 1,
) -> RepeatResult:
    """Run the full estimator: K base realizations, per-realization
    thresholding and weighting, weighted aggregation, Bernoulli variance.

    ``base_fn(image, seed) -> map`` overrides the configured base method
    (used to inject synthetic bases in tests).  Realizations run on a
    thread pool when ``threads > 1``; reduction order is fixed by k, so
    results are bit-identical for any thread count.  Fails when more than
    half the realizations are degenerate.
    """
    fn = base_fn if base_fn is not None else _base_fn(enc, cfg)

    def one(k: int):
        base = as_scalar_map(fn(x, seeds.derive_seed(cfg.seed, seeds.REALIZATION, k)))
        tres = select_threshold(base, cfg.threshold)
        ind = binarize(base, tres.value)
        w = weight_map(base)
        flags = RealizationFlags(
            threshold_degenerate=tres.degenerate,
            threshold_nonconverged=not tres.converged,
            weights_degenerate=not w.any(),
        )
        return ind, w, tres.value, flags

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(cfg.k)))
    else:
        parts = [one(k) for k in range(cfg.k)]

    inds, ws, taus, flags = zip(*parts)
    n_degenerate = sum(f.degenerate for f in flags)
    if n_degenerate > cfg.k / 2:
        raise DegenerateRunError(
            f"{n_degenerate} of {cfg.k} realizations degenerate "
            f"(zero-range base map or no positive scores); the estimate is meaningless"
        )
    importance = aggregate(inds, ws)
    return RepeatResult(
        importance=importance,
        uncertainty=bernoulli_uncertainty(importance),
        realizations=np.stack(inds),
        weights=np.stack(ws),
        thresholds=tuple(float(t) for t in taus),
        flags=tuple(flags),
    )

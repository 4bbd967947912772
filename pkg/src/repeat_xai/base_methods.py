"""Stochastic base importance estimators.

Three ways to score pixel importance for an embedding: occlusion-mask
similarity (average cosine similarity between the full and masked
representations, weighted onto the pixels each mask keeps), a label-free
Kernel SHAP over a patch grid (game value = inner product with the
unperturbed embedding), and a test-time-augmentation uncertainty baseline
(std of base maps across input-dropout versions).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import seeds
from .encoders import EncoderHandle, encode, encode_batch
from .errors import ValidationError
from .tensors import ImageTensor, ScalarMap, bilinear_resize

BaseMapFn = Callable[[ImageTensor, int], ScalarMap]

RIDGE_LAMBDA = 1e-8


@dataclass(frozen=True)
class MaskConfig:
    """Occlusion mask generator settings (low-res Bernoulli grid, upsampled)."""

    grid: int = 7
    cell_prob: float = 0.5
    num_masks: int = 100

    def __post_init__(self):
        if self.grid < 2:
            raise ValidationError(f"mask grid must be >= 2, got {self.grid}")
        if not 0.0 < self.cell_prob < 1.0:
            raise ValidationError(f"cell_prob must be in (0,1), got {self.cell_prob}")
        if self.num_masks < 2:
            raise ValidationError(f"num_masks must be >= 2, got {self.num_masks}")


@dataclass(frozen=True)
class ShapConfig:
    """Kernel SHAP settings: patch grid side, coalition budget, baseline fill."""

    patch_grid: int = 8
    num_coalitions: int = 256
    baseline: str = "zero"

    def __post_init__(self):
        if self.patch_grid < 2:
            raise ValidationError(f"patch_grid must be >= 2, got {self.patch_grid}")
        if self.num_coalitions < self.patch_grid**2 + 2:
            raise ValidationError(
                f"num_coalitions must be >= patch_grid^2 + 2 = {self.patch_grid**2 + 2}"
            )
        if self.baseline not in ("zero", "mean-pixel"):
            raise ValidationError(f"baseline must be 'zero' or 'mean-pixel', got {self.baseline!r}")


def generate_masks(cfg: MaskConfig, shape: tuple[int, int], seed: int) -> np.ndarray:
    """Sample ``cfg.num_masks`` soft masks of the given (H, W) shape.

    Each mask is a grid x grid Bernoulli(cell_prob) pattern, bilinearly
    upsampled to (H + cell, W + cell) and cropped at a uniform random
    integer offset, giving values in [0, 1].  Deterministic per seed.
    """
    h, w = shape
    rng = np.random.default_rng(seed)
    cell_h = math.ceil(h / cfg.grid)
    cell_w = math.ceil(w / cfg.grid)
    cells = (rng.random((cfg.num_masks, cfg.grid, cfg.grid)) < cfg.cell_prob).astype(np.float64)
    off_r = rng.integers(0, cell_h, size=cfg.num_masks)
    off_c = rng.integers(0, cell_w, size=cfg.num_masks)
    up = bilinear_resize(cells, h + cell_h, w + cell_w)
    masks = np.empty((cfg.num_masks, h, w))
    for i in range(cfg.num_masks):
        masks[i] = up[i, off_r[i] : off_r[i] + h, off_c[i] : off_c[i] + w]
    return np.clip(masks, 0.0, 1.0)


def _masked_similarities(x: ImageTensor, enc: EncoderHandle, masks: np.ndarray) -> np.ndarray:
    """Cosine similarity of the full embedding with each masked embedding."""
    h_full = encode(enc, x)
    masked = x.data[None, :, :, :] * masks[:, None, :, :]
    embs = encode_batch(enc, masked)
    dots = embs @ h_full
    denom = np.linalg.norm(embs, axis=1) * np.linalg.norm(h_full)
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def _relax_maps(x: ImageTensor, enc: EncoderHandle, cfg: MaskConfig, seed: int):
    masks = generate_masks(cfg, (x.height, x.width), seed)
    sims = _masked_similarities(x, enc, masks)
    importance = (sims[:, None, None] * masks).mean(axis=0)
    deviations = (sims[:, None, None] - importance[None, :, :]) ** 2
    uncertainty = (deviations * masks).mean(axis=0)
    return importance, uncertainty


def relax_importance(x: ImageTensor, enc: EncoderHandle, cfg: MaskConfig, seed: int) -> ScalarMap:
    """Mask-weighted mean similarity per pixel: (1/N) sum_n s_n * M_n(i,j)."""
    return _relax_maps(x, enc, cfg, seed)[0]


def relax_uncertainty(x: ImageTensor, enc: EncoderHandle, cfg: MaskConfig, seed: int) -> ScalarMap:
    """Mask-weighted variance of similarities per pixel (the score-variability
    uncertainty baseline): (1/N) sum_n (s_n - R_ij)^2 * M_n(i,j)."""
    return _relax_maps(x, enc, cfg, seed)[1]


def shapley_kernel_weight(num_features: int, size: int) -> float:
    """Weight (M-1) / (C(M,s) * s * (M-s)) for a coalition of ``size``; infinite
    at the empty and full coalitions (which are handled by constraints)."""
    if size <= 0 or size >= num_features:
        return math.inf
    return (num_features - 1) / (math.comb(num_features, size) * size * (num_features - size))


def _sample_coalitions(num_features: int, num_coalitions: int, rng: np.random.Generator) -> np.ndarray:
    """Coalition matrix (n, M) of {0,1}; empty and full are always present.

    When the budget covers 2^M coalitions, all of them are enumerated
    exactly once; otherwise sizes are drawn uniformly over 1..M-1 and
    members uniformly within the size.
    """
    m = num_features
    if num_coalitions >= 2**m:
        z = np.zeros((2**m, m), dtype=np.int8)
        for i in range(2**m):
            z[i] = [(i >> j) & 1 for j in range(m)]
        return z
    z = np.zeros((num_coalitions, m), dtype=np.int8)
    z[1] = 1  # row 0 empty, row 1 full
    for i in range(2, num_coalitions):
        size = int(rng.integers(1, m))
        members = rng.choice(m, size=size, replace=False)
        z[i, members] = 1
    return z


def kernel_shap_solve(value_fn, num_features: int, num_coalitions: int, seed: int) -> np.ndarray:
    """Per-feature attributions from a Shapley-kernel weighted least squares.

    ``value_fn`` maps a (n, M) coalition matrix to n game values.  The
    empty coalition fixes the intercept and efficiency (attributions sum
    to v(full) - v(empty)) is enforced exactly by eliminating the last
    feature.  A singular system falls back to a ridge solve (lambda=1e-8)
    with a warning.  With full enumeration the result equals the exact
    Shapley values.
    """
    if num_features < 1:
        raise ValidationError("need at least one feature")
    rng = np.random.default_rng(seed)
    z = _sample_coalitions(num_features, num_coalitions, rng)
    values = np.asarray(value_fn(z), dtype=np.float64)
    if values.shape != (len(z),):
        raise ValidationError("value_fn must return one value per coalition")
    sizes = z.sum(axis=1)
    v_empty = float(values[sizes == 0][0])
    v_full = float(values[sizes == num_features][0])
    total = v_full - v_empty
    if num_features == 1:
        return np.array([total])
    interior = (sizes > 0) & (sizes < num_features)
    zi = z[interior].astype(np.float64)
    yi = values[interior] - v_empty
    wi = np.array([shapley_kernel_weight(num_features, int(s)) for s in sizes[interior]])
    # Eliminate the last feature via the efficiency constraint.
    zr = zi[:, :-1] - zi[:, -1:]
    yr = yi - zi[:, -1] * total
    a = zr.T @ (wi[:, None] * zr)
    b = zr.T @ (wi * yr)
    try:
        head = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        warnings.warn("singular attribution system; using ridge-regularized solve", RuntimeWarning)
        head = np.linalg.solve(a + RIDGE_LAMBDA * np.eye(len(a)), b)
    return np.append(head, total - head.sum())


def patch_slices(shape: tuple[int, int], patch_grid: int) -> list[tuple[slice, slice]]:
    """Row-major list of (row, col) slices of a patch_grid x patch_grid cover."""
    h, w = shape
    rows = np.linspace(0, h, patch_grid + 1).astype(int)
    cols = np.linspace(0, w, patch_grid + 1).astype(int)
    return [
        (slice(rows[i], rows[i + 1]), slice(cols[j], cols[j + 1]))
        for i in range(patch_grid)
        for j in range(patch_grid)
    ]


def kernel_shap_importance(x: ImageTensor, enc: EncoderHandle, cfg: ShapConfig, seed: int) -> ScalarMap:
    """Label-free Kernel SHAP attribution map over a regular patch grid.

    The game value of a coalition keeps its patches from ``x`` and fills
    the rest with the baseline; v(S) is the inner product of the coalition
    image's embedding with the unperturbed embedding.  Each patch's
    attribution is broadcast uniformly over its pixels.
    """
    if x.shape != enc.input_shape:
        raise ValidationError(f"image shape {x.shape} does not match encoder input {enc.input_shape}")
    slices = patch_slices((x.height, x.width), cfg.patch_grid)
    if cfg.baseline == "zero":
        fill = np.zeros_like(x.data)
    else:
        fill = np.broadcast_to(x.data.mean(axis=(1, 2))[:, None, None], x.data.shape)
    h_full = encode(enc, x)

    def value_fn(z: np.ndarray) -> np.ndarray:
        batch = np.broadcast_to(fill, (len(z),) + x.shape).copy()
        for i, row in enumerate(z):
            for p in np.flatnonzero(row):
                rs, cs = slices[p]
                batch[i, :, rs, cs] = x.data[:, rs, cs]
        return encode_batch(enc, batch) @ h_full

    phi = kernel_shap_solve(value_fn, len(slices), cfg.num_coalitions, seed)
    out = np.empty((x.height, x.width))
    for p, (rs, cs) in enumerate(slices):
        out[rs, cs] = phi[p]
    return out


def tta_uncertainty(
    x: ImageTensor,
    enc: EncoderHandle,
    base,
    n_aug: int,
    drop_prob: float,
    seed: int,
    mask_cfg: MaskConfig | None = None,
    shap_cfg: ShapConfig | None = None,
) -> ScalarMap:
    """Per-pixel std of base importance across input-dropout versions.

    ``base`` is ``"relax"``, ``"kernel-shap"``, or a callable
    ``(image, seed) -> map``.  Each of the ``n_aug`` versions zeroes pixels
    independently at rate ``drop_prob`` (whole pixel across channels); the
    base method runs with one shared seed so only the input varies.  The
    returned map is the population standard deviation per pixel.
    """
    if n_aug < 2:
        raise ValidationError(f"n_aug must be >= 2, got {n_aug}")
    if not 0.0 < drop_prob < 1.0:
        raise ValidationError(f"drop_prob must be in (0,1), got {drop_prob}")
    if callable(base):
        base_fn = base
    elif base == "relax":
        cfg = mask_cfg or MaskConfig()
        base_fn = lambda img, s: relax_importance(img, enc, cfg, s)
    elif base in ("kernel-shap", "shap"):
        cfg = shap_cfg or ShapConfig()
        base_fn = lambda img, s: kernel_shap_importance(img, enc, cfg, s)
    else:
        raise ValidationError(f"unknown base method {base!r}")
    base_seed = seeds.derive_seed(seed, seeds.AUGMENTATION, 0)
    maps = []
    for j in range(n_aug):
        rng = np.random.default_rng(seeds.derive_seed(seed, seeds.AUGMENTATION, j + 1))
        keep = (rng.random((x.height, x.width)) >= drop_prob).astype(np.float64)
        maps.append(base_fn(ImageTensor(x.data * keep[None, :, :]), base_seed))
    return np.std(np.stack(maps), axis=0)

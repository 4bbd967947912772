"""Evaluation harness: sanity check, OOD detection, complexity, corpora.

Three views on an uncertainty map's quality: the randomization sanity
check (does randomizing the encoder make the uncertainty map's value
histogram more complex?), OOD detection (do aggregated uncertainties
separate in-distribution from out-of-distribution images under a
two-component Gaussian mixture?), and conciseness (entropy of the
per-pixel uncertainties).  Synthetic corpus generators provide desk-scale
stand-ins for real datasets.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from . import seeds
from .base_methods import relax_uncertainty, tta_uncertainty
from .core import RepeatConfig, repeat_explain
from .encoders import CONV1_CHANNELS, CONV2_CHANNELS, EncoderHandle, _validate_shape, randomize
from .errors import ValidationError
from .tensors import DEFAULT_BINS, ImageTensor, ScalarMap, histogram, shannon_entropy

VARIANCE_FLOOR = 1e-9
EM_TOL = 1e-6
EM_MAX_ITER = 200

_METHOD_ALIASES = {"repeat": "repeat", "relax": "relax", "tta-base": "tta", "tta": "tta"}


# ---------------------------------------------------------------------------
# complexity and the randomization sanity check


def complexity(u) -> float:
    """Entropy (nats) of an image's per-pixel uncertainties, treated as
    unnormalized weights.  An all-zero map is perfectly confident and has
    complexity 0 (flagged with a warning)."""
    arr = np.asarray(u, dtype=np.float64)
    if arr.size == 0 or not np.all(np.isfinite(arr)) or arr.min() < 0:
        raise ValidationError("uncertainty map must be non-empty, finite, non-negative")
    if arr.max() == 0.0:
        warnings.warn("all-zero uncertainty map; complexity defined as 0", RuntimeWarning)
        return 0.0
    return shannon_entropy(arr.ravel())


def discrete_complexity(map_, bins: int = DEFAULT_BINS) -> float:
    """Entropy of the binned value distribution of a map (histogram counts
    as weights); the complexity functional used by the sanity check."""
    h = histogram(np.asarray(map_, dtype=np.float64).ravel(), bins=bins)
    return shannon_entropy(h.counts.astype(np.float64))


def emprt_from_maps(u_trained, u_randomized, bins: int = DEFAULT_BINS) -> float:
    """Relative complexity rise (C_rand - C_trained) / C_trained.

    Positive means the randomized model's uncertainty map is more complex
    (the desired direction); identical maps score exactly 0.
    """
    c_trained = discrete_complexity(u_trained, bins)
    c_rand = discrete_complexity(u_randomized, bins)
    if c_trained == 0.0:
        raise ValidationError("trained-map complexity is 0; the relative rise is undefined")
    return (c_rand - c_trained) / c_trained


def emprt_score(x: ImageTensor, enc: EncoderHandle, cfg: RepeatConfig, rand_seed: int) -> float:
    """Sanity-check score for one image: run the estimator under ``enc`` and
    under a weight-randomized copy, and compare uncertainty-map complexity."""
    u_trained = repeat_explain(x, enc, cfg).uncertainty
    u_rand = repeat_explain(x, randomize(enc, rand_seed), cfg).uncertainty
    return emprt_from_maps(u_trained, u_rand)


def aggregate_uncertainty(u) -> float:
    """Scalar per-image score: the mean pixel uncertainty."""
    arr = np.asarray(u, dtype=np.float64)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ValidationError("uncertainty map must be non-empty and finite")
    return float(arr.mean())


# ---------------------------------------------------------------------------
# two-component Gaussian mixture and AUROC


@dataclass(frozen=True)
class GmmModel:
    """A fitted two-component 1-D Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    history: tuple[float, ...] = ()


def _log_responsibilities(scores, weights, means, variances):
    x = scores[:, None]
    log_pdf = -0.5 * (np.log(2 * np.pi * variances) + (x - means) ** 2 / variances)
    joint = np.log(weights) + log_pdf
    norm = np.logaddexp(joint[:, 0], joint[:, 1])
    return joint - norm[:, None], norm


def gmm_responsibilities(model: GmmModel, scores) -> np.ndarray:
    """Posterior component membership, one row per score (rows sum to 1)."""
    arr = np.asarray(scores, dtype=np.float64).ravel()
    log_r, _ = _log_responsibilities(arr, model.weights, model.means, model.variances)
    return np.exp(log_r)


def gmm_fit(scores, seed: int = 0) -> GmmModel:
    """EM fit of a two-component mixture to 1-D scores.

    Deterministic initialization: means at the 25th/75th percentiles,
    pooled variance, equal weights.  Stops when the log-likelihood gain
    drops below 1e-6 or after 200 iterations; variances are floored at
    1e-9.  ``seed`` is reserved (the init draws nothing).
    """
    del seed
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size < 4 or not np.all(np.isfinite(x)):
        raise ValidationError("need at least 4 finite scores")
    if x.min() == x.max():
        raise ValidationError("scores have zero spread; a mixture fit is undefined")
    weights = np.array([0.5, 0.5])
    means = np.percentile(x, [25.0, 75.0])
    variances = np.full(2, max(float(np.var(x)), VARIANCE_FLOOR))
    history = []
    prev = -np.inf
    converged = False
    iterations = 0
    for iterations in range(1, EM_MAX_ITER + 1):
        log_r, norm = _log_responsibilities(x, weights, means, variances)
        ll = float(norm.sum())
        history.append(ll)
        if ll - prev < EM_TOL and iterations > 1:
            converged = True
            break
        prev = ll
        resp = np.exp(log_r)
        mass = resp.sum(axis=0)
        weights = mass / x.size
        means = (resp * x[:, None]).sum(axis=0) / mass
        variances = np.maximum(
            (resp * (x[:, None] - means) ** 2).sum(axis=0) / mass, VARIANCE_FLOOR
        )
    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=history[-1],
        iterations=iterations,
        converged=converged,
        history=tuple(history),
    )


def ood_posterior(model: GmmModel, scores) -> np.ndarray:
    """Posterior probability of the higher-mean component per score.

    The higher-mean component is the OOD detector: unfamiliar inputs are
    expected to carry the larger uncertainties.
    """
    hi = int(np.argmax(model.means))
    return gmm_responsibilities(model, scores)[:, hi]


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic.

    Equals the fraction of (positive, negative) pairs where the positive
    scores higher, ties counting one half (midranks).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(int)
    if s.shape != y.shape:
        raise ValidationError("scores and labels must have equal length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("both classes must be present")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class EvalRecord:
    """Per-image evaluation outcome."""

    image_id: str
    score: float
    complexity: float
    label: str  # "in-dist" or "ood"


@dataclass(frozen=True)
class OodReport:
    """One OOD detection run: per-image records, the fitted mixture, the
    posterior scores, the AUROC, and score histograms per corpus."""

    records: tuple[EvalRecord, ...]
    gmm: GmmModel
    posteriors: np.ndarray
    auroc: float
    hist_edges: np.ndarray
    hist_in: np.ndarray
    hist_ood: np.ndarray


def _uncertainty_map(
    x: ImageTensor,
    enc: EncoderHandle,
    cfg: RepeatConfig,
    method: str,
    seed: int,
    tta_n: int,
    tta_p: float,
) -> ScalarMap:
    if method == "repeat":
        return repeat_explain(x, enc, replace(cfg, seed=seed)).uncertainty
    if method == "relax":
        return relax_uncertainty(x, enc, cfg.masks, seed)
    return tta_uncertainty(x, enc, cfg.base, tta_n, tta_p, seed, mask_cfg=cfg.masks, shap_cfg=cfg.shap)


def run_ood_experiment(
    in_corpus,
    ood_corpus,
    enc: EncoderHandle,
    cfg: RepeatConfig,
    method: str = "repeat",
    tta_n: int = 10,
    tta_p: float = 0.5,
    hist_bins: int = 20,
    threads: int = 1,
) -> OodReport:
    """Score every image's aggregated uncertainty, fit the mixture on the
    pooled scores (labels never enter the fit), and report the AUROC of the
    higher-mean-component posterior against the corpus labels."""
    in_corpus = list(in_corpus)
    ood_corpus = list(ood_corpus)
    if not in_corpus or not ood_corpus:
        raise ValidationError("both corpora must be non-empty")
    try:
        method = _METHOD_ALIASES[method]
    except KeyError:
        raise ValidationError(f"unknown method {method!r}") from None
    images = in_corpus + ood_corpus
    labels = ["in-dist"] * len(in_corpus) + ["ood"] * len(ood_corpus)

    def one(i: int):
        seed_i = seeds.derive_seed(cfg.seed, seeds.CORPUS_IMAGE, i)
        u = _uncertainty_map(images[i], enc, cfg, method, seed_i, tta_n, tta_p)
        return aggregate_uncertainty(u), complexity(u)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(one, range(len(images))))
    else:
        stats = [one(i) for i in range(len(images))]

    scores = np.array([s for s, _ in stats])
    records = tuple(
        EvalRecord(image_id=f"{lab}-{i:04d}", score=s, complexity=c, label=lab)
        for i, ((s, c), lab) in enumerate(zip(stats, labels))
    )
    model = gmm_fit(scores)
    post = ood_posterior(model, scores)
    numeric = np.array([1 if lab == "ood" else 0 for lab in labels])
    edges = np.linspace(scores.min(), scores.max(), hist_bins + 1)
    if edges[0] == edges[-1]:
        edges = np.linspace(edges[0] - 0.5, edges[0] + 0.5, hist_bins + 1)
    hist_in, _ = np.histogram(scores[numeric == 0], bins=edges)
    hist_ood, _ = np.histogram(scores[numeric == 1], bins=edges)
    return OodReport(
        records=records,
        gmm=model,
        posteriors=post,
        auroc=auroc(post, numeric),
        hist_edges=edges,
        hist_in=hist_in,
        hist_ood=hist_ood,
    )


# ---------------------------------------------------------------------------
# synthetic corpora and the trained-construction encoder stand-in


def _gaussian_blob(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def synth_corpus(kind: str, n: int, shape: tuple[int, int, int], seed: int) -> list[ImageTensor]:
    """Generate a deterministic synthetic corpus.

    ``structured``: a bright smooth blob on a dark background (clear
    foreground), ``noise``: i.i.d. uniform pixels (OOD proxy),
    ``fluctuating``: faint low-contrast blobs with per-image contrast
    jitter, built so base-map values crowd the mean threshold.
    """
    if n < 1:
        raise ValidationError(f"corpus size must be >= 1, got {n}")
    c, h, w = _validate_shape(shape, dim=8)
    images = []
    for i in range(n):
        rng = np.random.default_rng(seeds.derive_seed(seed, seeds.SYNTH_IMAGE, i))
        cy = rng.uniform(0.25 * h, 0.75 * h)
        cx = rng.uniform(0.25 * w, 0.75 * w)
        sigma = rng.uniform(0.12, 0.22) * min(h, w)
        blob = _gaussian_blob(h, w, cy, cx, sigma)
        if kind == "structured":
            background = 0.08 + 0.04 * rng.random()
            amplitude = rng.uniform(0.6, 0.85)
            img = background + amplitude * blob
        elif kind == "noise":
            img = rng.random((h, w))
        elif kind == "fluctuating":
            background = 0.45 + 0.05 * rng.random()
            amplitude = rng.uniform(0.01, 0.05)  # contrast jitter: barely-there object
            img = background + amplitude * blob
        else:
            raise ValidationError(f"unknown corpus kind {kind!r}")
        grid = np.broadcast_to(img, (c, h, w)).copy()
        if c == 3 and kind != "noise":
            grid *= rng.uniform(0.9, 1.0, size=(3, 1, 1))
        images.append(ImageTensor(np.clip(grid, 0.0, 1.0)))
    return images


_SMOOTH_BANK = np.array(
    [
        [[1, 2, 1], [2, 4, 2], [1, 2, 1]],  # blur
        [[1, 0, -1], [2, 0, -2], [1, 0, -1]],  # vertical edge
        [[1, 2, 1], [0, 0, 0], [-1, -2, -1]],  # horizontal edge
        [[2, 1, 0], [1, 0, -1], [0, -1, -2]],  # diagonal edge
        [[0, -1, 0], [-1, 4, -1], [0, -1, 0]],  # center-surround
    ],
    dtype=np.float64,
)


def structured_encoder(seed: int, input_shape, dim: int) -> EncoderHandle:
    """Conv encoder whose kernels are smooth oriented filters.

    This is the desk-scale stand-in for a trained feature extractor in the
    sanity check: trained low-level convolutions are smooth and oriented,
    unlike the i.i.d. Gaussian kernels of a randomized model.  The handle
    shares the toy-conv architecture, so ``randomize`` on it yields the
    Gaussian comparison encoder.
    """
    c, h, w = _validate_shape(input_shape, dim)
    rng = np.random.default_rng(seed)
    bank = _SMOOTH_BANK / np.linalg.norm(_SMOOTH_BANK, axis=(1, 2), keepdims=True)
    conv1 = np.empty((CONV1_CHANNELS, c, 3, 3))
    for o in range(CONV1_CHANNELS):
        conv1[o] = bank[o % len(bank)] / c
    conv2 = np.empty((CONV2_CHANNELS, CONV1_CHANNELS, 3, 3))
    mix = rng.uniform(0.5, 1.0, size=(CONV2_CHANNELS, CONV1_CHANNELS))
    mix /= mix.sum(axis=1, keepdims=True)
    for o in range(CONV2_CHANNELS):
        conv2[o] = mix[o][:, None, None] * bank[0][None, :, :]
    head = rng.standard_normal((dim, CONV2_CHANNELS)) / np.sqrt(CONV2_CHANNELS)
    return EncoderHandle(
        kind="conv",
        seed=int(seed),
        input_shape=(c, h, w),
        dim=int(dim),
        weights={"conv1": conv1, "conv2": conv2, "head": head},
    )

"""Deterministic seeded feature extractors.

Two toy encoder families stand in for large pretrained networks: a linear
random projection and a small two-layer strided convnet.  Both are pure
functions of (kind, seed, input shape, embedding dim), carry no biases (a
zero image embeds to the zero vector), and are immutable once built, so
re-randomizing weights means building a fresh handle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensors import Embedding, ImageTensor

_KIND_ALIASES = {
    "linear": "linear",
    "linear-projection": "linear",
    "conv": "conv",
    "toy-conv": "conv",
}

CONV1_CHANNELS = 8
CONV2_CHANNELS = 16


@dataclass(frozen=True, eq=False)
class EncoderHandle:
    """Immutable weight store for one encoder instance."""

    kind: str
    seed: int
    input_shape: tuple[int, int, int]
    dim: int
    weights: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        for arr in self.weights.values():
            arr.setflags(write=False)


def _validate_shape(input_shape, dim: int) -> tuple[int, int, int]:
    try:
        c, h, w = (int(v) for v in input_shape)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"input shape must be (C,H,W), got {input_shape!r}") from exc
    if c not in (1, 3):
        raise ValidationError(f"channels must be 1 or 3, got {c}")
    if h < 8 or w < 8:
        raise ValidationError(f"spatial dims must be >= 8, got {h}x{w}")
    if dim < 8:
        raise ValidationError(f"embedding dim must be >= 8, got {dim}")
    return c, h, w


def build_encoder(kind: str, seed: int, input_shape, dim: int) -> EncoderHandle:
    """Build a seeded encoder.

    ``linear``: one Gaussian projection from flattened pixels to ``dim``,
    rows scaled to unit norm.  ``conv``: two 3x3 stride-2 ReLU convolutions
    (8 then 16 channels, Gaussian weights scaled by 1/sqrt(fan-in)), global
    average pooling, and a linear head to ``dim``.  Identical arguments
    yield bit-identical weights.
    """
    try:
        canonical = _KIND_ALIASES[kind]
    except KeyError:
        raise ValidationError(f"unknown encoder kind {kind!r}") from None
    c, h, w = _validate_shape(input_shape, dim)
    rng = np.random.default_rng(seed)
    if canonical == "linear":
        proj = rng.standard_normal((dim, c * h * w))
        proj /= np.linalg.norm(proj, axis=1, keepdims=True)
        weights = {"projection": proj}
    else:
        conv1 = rng.standard_normal((CONV1_CHANNELS, c, 3, 3)) / np.sqrt(c * 9)
        conv2 = rng.standard_normal((CONV2_CHANNELS, CONV1_CHANNELS, 3, 3)) / np.sqrt(CONV1_CHANNELS * 9)
        head = rng.standard_normal((dim, CONV2_CHANNELS)) / np.sqrt(CONV2_CHANNELS)
        weights = {"conv1": conv1, "conv2": conv2, "head": head}
    return EncoderHandle(kind=canonical, seed=int(seed), input_shape=(c, h, w), dim=int(dim), weights=weights)


def randomize(enc: EncoderHandle, new_seed: int) -> EncoderHandle:
    """Fresh Gaussian weights for the same architecture; ``enc`` is untouched."""
    return build_encoder(enc.kind, new_seed, enc.input_shape, enc.dim)


def _conv2d_stride2(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 stride-2 pad-1 convolution of a (B,Cin,H,W) batch."""
    b, cin, h, w = x.shape
    cout = kernel.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::2, ::2]
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, cin * 9)
    out = cols @ kernel.reshape(cout, cin * 9).T
    return out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)


def encode_batch(enc: EncoderHandle, batch: np.ndarray) -> np.ndarray:
    """Embed a (B,C,H,W) batch of pixel arrays; returns (B, dim)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != enc.input_shape:
        raise ValidationError(
            f"batch shape {batch.shape} does not match encoder input {enc.input_shape}"
        )
    if enc.kind == "linear":
        return batch.reshape(batch.shape[0], -1) @ enc.weights["projection"].T
    a = np.maximum(_conv2d_stride2(batch, enc.weights["conv1"]), 0.0)
    a = np.maximum(_conv2d_stride2(a, enc.weights["conv2"]), 0.0)
    pooled = a.mean(axis=(2, 3))
    return pooled @ enc.weights["head"].T


def encode(enc: EncoderHandle, x: ImageTensor) -> Embedding:
    """Deterministic embedding of one image."""
    if x.shape != enc.input_shape:
        raise ValidationError(f"image shape {x.shape} does not match encoder input {enc.input_shape}")
    return encode_batch(enc, x.data[None])[0]


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1].

    A zero vector has no direction; by convention the similarity involving
    one is 0 (neutral), which is what a fully-masked image under a bias-free
    encoder produces.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"embedding dims differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))

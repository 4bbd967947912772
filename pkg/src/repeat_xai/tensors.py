"""Dense numeric grids, image I/O, histograms, and entropy.

Maps and images are plain float64 numpy arrays wrapped only where metadata
matters (``ImageTensor``, ``Histogram``).  The on-disk raw tensor format is
fixed: magic ``RPT1``, little-endian u32 channels/height/width, then
channels*height*width little-endian f32 values, channel-major row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ValidationError

RAW_MAGIC = b"RPT1"
PNG_MAGIC = b"\x89PNG"

#: Bin count shared by every histogram-based consumer (8-bit convention).
DEFAULT_BINS = 256

# Type aliases used throughout: a ScalarMap is a finite 2-D float64 array,
# a BinaryMask a 2-D uint8 array of {0,1}, an Embedding a 1-D float64 array.
ScalarMap = np.ndarray
BinaryMask = np.ndarray
Embedding = np.ndarray


def as_scalar_map(data) -> ScalarMap:
    """Validate and return ``data`` as a finite 2-D float64 grid."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"scalar map must be non-empty 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("scalar map contains NaN or Inf")
    return arr


def as_binary_mask(data) -> BinaryMask:
    """Validate and return ``data`` as a 2-D uint8 grid of {0,1}."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"binary mask must be non-empty 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError("binary mask may only contain 0 and 1")
    return arr.astype(np.uint8)


@dataclass(frozen=True)
class ImageTensor:
    """A (channels, height, width) grid of values in [0, 1].

    Channels is 1 or 3, spatial dimensions are at least 8, and values are
    finite.  Instances are immutable; the backing array is marked read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValidationError(f"image tensor must be 3-D (C,H,W), got shape {arr.shape}")
        c, h, w = arr.shape
        if c not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {c}")
        if h < 8 or w < 8:
            raise ValidationError(f"height and width must be >= 8, got {h}x{w}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image contains NaN or Inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Histogram:
    """Equal-width binned distribution of a value sample.

    ``degenerate`` is set when the source sample had zero range; the edges
    are then the +-0.5 expansion around the single value and exactly one
    bin is occupied.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    total: int
    degenerate: bool = False

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or counts.ndim != 1 or len(edges) != len(counts) + 1:
            raise ValidationError("histogram needs B+1 edges for B counts")
        if len(counts) < 2:
            raise ValidationError("histogram needs at least 2 bins")
        if not np.all(np.diff(edges) > 0):
            raise ValidationError("bin edges must be strictly increasing")
        if counts.min() < 0 or int(counts.sum()) != self.total:
            raise ValidationError("counts must be non-negative and sum to total")
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def num_bins(self) -> int:
        return len(self.counts)

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    def bin_centers(self) -> np.ndarray:
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2.0


def histogram(values, bins: int = DEFAULT_BINS) -> Histogram:
    """Equal-width histogram over [min, max] of ``values``.

    The maximum value is assigned to the last bin.  A zero-range sample
    yields a flagged degenerate histogram (edges expanded by +-0.5) instead
    of an error.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValidationError("cannot histogram an empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("histogram input contains NaN or Inf")
    if bins < 2:
        raise ValidationError(f"need at least 2 bins, got {bins}")
    degenerate = bool(arr.min() == arr.max())
    counts, edges = np.histogram(arr, bins=bins)
    return Histogram(bin_edges=edges, counts=counts, total=int(arr.size), degenerate=degenerate)


def shannon_entropy(weights) -> float:
    """Entropy in nats of ``weights`` normalized to a distribution.

    Zero weights contribute nothing (0*ln 0 := 0).  The result lies in
    [0, ln N] for N weights.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValidationError("entropy of an empty weight sequence is undefined")
    if not np.all(np.isfinite(w)) or w.min() < 0:
        raise ValidationError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValidationError("at least one weight must be positive")
    p = w[w > 0] / total
    return float(-np.sum(p * np.log(p)))


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the trailing two axes of ``arr`` with align-corners bilinear
    interpolation: output corners coincide exactly with input corners."""
    arr = np.asarray(arr, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValidationError("target size must be positive")
    in_h, in_w = arr.shape[-2], arr.shape[-1]
    rows = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    cols = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = arr[..., r0[:, None], c0[None, :]] * (1 - fc) + arr[..., r0[:, None], c1[None, :]] * fc
    bot = arr[..., r1[:, None], c0[None, :]] * (1 - fc) + arr[..., r1[:, None], c1[None, :]] * fc
    return top * (1 - fr) + bot * fr


def write_raw(path, data: np.ndarray) -> None:
    """Write a (C,H,W) or (H,W) array in the raw tensor format (f32)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValidationError(f"raw tensors are 2-D or 3-D, got shape {arr.shape}")
    c, h, w = arr.shape
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(payload)


def read_raw(path) -> np.ndarray:
    """Read a raw tensor file back as a (C,H,W) float64 array."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != RAW_MAGIC:
        raise FormatError(f"{path}: not a raw tensor file (bad magic)")
    c, h, w = struct.unpack("<III", blob[4:16])
    if c == 0 or h == 0 or w == 0:
        raise ValidationError(f"{path}: zero dimension in header ({c},{h},{w})")
    expected = 16 + 4 * c * h * w
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob) - 16} bytes, expected {expected - 16}")
    flat = np.frombuffer(blob, dtype="<f4", offset=16)
    return flat.astype(np.float64).reshape(c, h, w)


def load_image(path, target_size: tuple[int, int] | None = None) -> ImageTensor:
    """Load a PNG (8-bit grayscale or RGB) or raw tensor file as an image.

    PNG intensities are scaled by 1/255; raw tensors must already lie in
    [0, 1].  If ``target_size`` is given the image is resized to
    (height, width) by bilinear interpolation.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == RAW_MAGIC:
        arr = read_raw(path)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError(f"{path}: raw image values must lie in [0, 1]")
    elif magic == PNG_MAGIC:
        try:
            with Image.open(path) as img:
                img.load()
                if img.mode != "L":
                    img = img.convert("RGB")
                arr = np.asarray(img, dtype=np.float64) / 255.0
        except (UnidentifiedImageError, SyntaxError, OSError) as exc:
            raise FormatError(f"{path}: corrupt PNG ({exc})") from exc
        arr = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    else:
        raise FormatError(f"{path}: neither PNG nor raw tensor (magic {magic!r})")
    if target_size is not None:
        th, tw = target_size
        if th <= 0 or tw <= 0:
            raise ValidationError(f"target size must be positive, got {target_size}")
        arr = np.clip(bilinear_resize(arr, th, tw), 0.0, 1.0)
    return ImageTensor(arr)


def _blue_red(t: np.ndarray) -> np.ndarray:
    """Linear blue->red ramp: t=0 maps to (0,0,255), t=1 to (255,0,0)."""
    rgb = np.zeros(t.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.rint(255.0 * t).astype(np.uint8)
    rgb[..., 2] = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    return rgb


def save_map(map_, path, mode: str = "heatmap") -> None:
    """Write a scalar map as a heatmap PNG or as a raw tensor.

    Heatmap mode min-max normalizes and applies the blue->red ramp; a
    constant map renders at the midpoint color.  Raw mode writes the raw
    tensor format (single channel) bit-exactly at f32 precision.
    """
    arr = as_scalar_map(map_)
    if mode == "raw":
        write_raw(path, arr)
        return
    if mode != "heatmap":
        raise ValidationError(f"unknown save mode {mode!r}")
    lo, hi = arr.min(), arr.max()
    if hi > lo:
        t = (arr - lo) / (hi - lo)
    else:
        t = np.full_like(arr, 0.5)
    Image.fromarray(_blue_red(t), mode="RGB").save(path, format="PNG")


def load_map(path) -> ScalarMap:
    """Read a single-channel raw tensor file back as a scalar map."""
    arr = read_raw(path)
    if arr.shape[0] != 1:
        raise ValidationError(f"{path}: expected a single-channel map, got {arr.shape[0]} channels")
    return arr[0]

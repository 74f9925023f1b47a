"""Patch extraction, luminance entropy, and the entropy-based reliability filter.

A patch is a small square block of 8-bit RGB pixels cut from a source image.
Not every patch is usable for forensic comparison: saturated or near-constant
blocks carry almost no trace information, and extremely busy blocks bury the
trace under scene content.  The filter here keeps patches whose luminance
entropy falls inside a configurable band (defaults 1.8 to 5.2 nats) and is
applied at evaluation time only, never while training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError

LN_256 = math.log(256.0)

#: Patch edge lengths accepted by the production scoring paths.
PRODUCTION_PATCH_SIZES = (128, 256)


@dataclass
class Patch:
    """A square 8-bit RGB pixel block with provenance.

    pixels: (H, W, 3) uint8 array, RGB channel order.
    origin: (row, col) offset of the top-left corner in the source image.
    source_id: opaque identifier of the source image.
    trace_label: optional opaque label naming the forensic trace.
    """

    pixels: np.ndarray
    origin: tuple[int, int] = (0, 0)
    source_id: str = ""
    trace_label: str | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"patch pixels must be (H, W, 3), got {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ConfigurationError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    def is_production_size(self) -> bool:
        h, w = self.pixels.shape[:2]
        return h == w and h in PRODUCTION_PATCH_SIZES


@dataclass(frozen=True)
class EntropyThresholds:
    """Inclusive luminance-entropy band, in nats.

    Defaults follow the permissive band that keeps roughly 95% of natural
    image patches while discarding saturated and hyper-textured ones.
    """

    min_nats: float = 1.8
    max_nats: float = 5.2

    def __post_init__(self):
        if not (0.0 <= self.min_nats < self.max_nats):
            raise ConfigurationError(
                f"need 0 <= min < max, got min={self.min_nats} max={self.max_nats}"
            )
        if self.max_nats > LN_256 + 1e-9:
            raise ConfigurationError(f"max_nats cannot exceed ln(256) ~ {LN_256:.4f}")

    def contains(self, h: float) -> bool:
        return self.min_nats <= h <= self.max_nats


DEFAULT_THRESHOLDS = EntropyThresholds()


def _pixels_of(patch) -> np.ndarray:
    if isinstance(patch, Patch):
        return patch.pixels
    return np.asarray(patch)


def luminance(patch) -> np.ndarray:
    """Integer luma plane of a patch, BT.601 weights.

    Each value is round(0.299*R + 0.587*G + 0.114*B) (ties to even), clamped
    to [0, 255].  Returned as an (H, W) uint8 array so it can feed a 256-bin
    histogram directly.
    """
    px = _pixels_of(patch).astype(np.float64)
    y = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def entropy(patch) -> float:
    """Luminance entropy of a patch in nats.

    h = -sum_k p_k ln(p_k) over the 256 luma bins, with 0*ln(0) = 0, where
    p_k is the proportion of pixels whose luma value is k.  Bounded by
    [0, ln 256].
    """
    luma = luminance(patch)
    counts = np.bincount(luma.ravel(), minlength=256)
    p = counts[counts > 0] / luma.size
    return float(-np.sum(p * np.log(p)))


def passes_filter(patch, thresholds: EntropyThresholds = DEFAULT_THRESHOLDS) -> bool:
    """True iff the patch's entropy lies inside the band (inclusive ends).

    Evaluation-time gate only; training deliberately sees unfiltered patches.
    """
    h = entropy(patch)
    return thresholds.min_nats <= h <= thresholds.max_nats


def tile(
    image,
    patch_size: int,
    overlap_fraction: float = 0.0,
    source_id: str = "",
    trace_label: str | None = None,
) -> list[Patch]:
    """Cut an image into a row-major grid of square patches.

    The stride is patch_size * (1 - overlap_fraction), rounded to the nearest
    integer pixel.  Trailing rows/columns that cannot hold a full patch are
    dropped; nothing is padded, since padding would inject a synthetic trace.

    Raises DimensionError if the image is smaller than patch_size in either
    dimension, ConfigurationError for overlap outside [0, 1).
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got {img.shape}")
    if not (0.0 <= overlap_fraction < 1.0):
        raise ConfigurationError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    if patch_size < 1:
        raise ConfigurationError("patch_size must be positive")
    h, w = img.shape[:2]
    if h < patch_size or w < patch_size:
        raise DimensionError(
            f"image {h}x{w} is smaller than patch_size {patch_size} in some dimension"
        )
    stride = max(1, int(round(patch_size * (1.0 - overlap_fraction))))
    out = []
    for top in range(0, h - patch_size + 1, stride):
        for left in range(0, w - patch_size + 1, stride):
            block = img[top : top + patch_size, left : left + patch_size]
            out.append(
                Patch(
                    pixels=np.ascontiguousarray(block),
                    origin=(top, left),
                    source_id=source_id,
                    trace_label=trace_label,
                )
            )
    return out


def grid_shape(image_shape: tuple[int, int], patch_size: int, overlap_fraction: float) -> tuple[int, int]:
    """(rows, cols) of the grid tile() would produce for an image of this shape."""
    h, w = image_shape
    stride = max(1, int(round(patch_size * (1.0 - overlap_fraction))))
    if h < patch_size or w < patch_size:
        raise DimensionError(f"image {h}x{w} smaller than patch_size {patch_size}")
    return ((h - patch_size) // stride + 1, (w - patch_size) // stride + 1)


def crop_top_left(patch: Patch, size: int) -> Patch:
    """Top-left sub-patch, used to derive 128px patches from 256px ones."""
    if size > patch.size:
        raise DimensionError(f"cannot crop {patch.size}px patch to {size}px")
    return Patch(
        pixels=np.ascontiguousarray(patch.pixels[:size, :size]),
        origin=patch.origin,
        source_id=patch.source_id,
        trace_label=patch.trace_label,
    )


def center_crop(image, size: int) -> np.ndarray:
    """Central size x size window of an RGB array."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    if h < size or w < size:
        raise DimensionError(f"image {h}x{w} smaller than requested {size}px crop")
    r0, c0 = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(img[r0 : r0 + size, c0 : c0 + size])

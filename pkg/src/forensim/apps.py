"""Downstream applications: forgery detection/localization and database checks.

Both applications consume only pairwise similarity scores over image blocks.
Forgery detection thresholds the mean of the all-pairs score matrix (low
mean = inconsistent traces = likely tampered); localization compares one
reference block against the rest; database verification aggregates
cross-image patch scores into per-pair medians and a rank statistic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    UnreliableImageError,
    UnreliableReferenceError,
)
from .patches import grid_shape, tile

DEFAULT_BLOCK_SIZE = 128
DEFAULT_OVERLAP = 0.5


def mean_similarity(matrix) -> float:
    """Mean of an n x n score matrix via the explicit ordered double sum.

    Kept as a plain accumulation loop (i outer, j inner, self-pairs included)
    so the statistic is bit-for-bit the written double sum, not a rearranged
    vectorized reduction.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("score matrix must be square")
    n = m.shape[0]
    if n == 0:
        raise UnreliableImageError("no usable blocks to aggregate")
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += m[i, j]
    return total / (n * n)


def _usable_blocks(image, system, block_size: int, overlap: float):
    blocks = tile(image, block_size, overlap)
    mask = system.reliability_mask(blocks)
    return blocks, mask


def forgery_score(
    image,
    system,
    block_size: int = DEFAULT_BLOCK_SIZE,
    overlap: float = DEFAULT_OVERLAP,
) -> float:
    """Mean pairwise similarity over all usable blocks (self-pairs included).

    Blocks failing the entropy filter are dropped and the normalization
    shrinks with them.  Zero usable blocks is an error, not a score.
    """
    blocks, mask = _usable_blocks(image, system, block_size, overlap)
    kept = [b for b, ok in zip(blocks, mask) if ok]
    if not kept:
        raise UnreliableImageError(
            f"all {len(blocks)} blocks fail the entropy filter; image carries no usable trace"
        )
    matrix = system.score_matrix(kept)
    return mean_similarity(matrix)


def detect_forgery(
    image,
    system,
    threshold: float = 0.5,
    block_size: int = DEFAULT_BLOCK_SIZE,
    overlap: float = DEFAULT_OVERLAP,
) -> tuple[bool, float]:
    """Returns (forged, score): forged iff the mean similarity falls below threshold."""
    m = forgery_score(image, system, block_size, overlap)
    return m < threshold, m


@dataclass
class LocalizationMap:
    """Per-block similarity scores against one reference block.

    Flags are derived, never stored: re-thresholding a saved map needs no
    rescoring.  `reliable` records the entropy-filter status per block for
    display; the flag rule itself is purely score <= eta, reference excluded.
    """

    block_size: int
    overlap: float
    grid_dims: tuple[int, int]
    reference: tuple[int, int]
    eta: float
    scores: np.ndarray  # (rows, cols) float64
    reliable: np.ndarray  # (rows, cols) bool

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.reliable = np.asarray(self.reliable, dtype=bool)
        if self.scores.shape != tuple(self.grid_dims) or self.reliable.shape != tuple(self.grid_dims):
            raise DimensionError("grid arrays must match grid_dims")
        r, c = self.reference
        rows, cols = self.grid_dims
        if not (0 <= r < rows and 0 <= c < cols):
            raise ConfigurationError(f"reference {self.reference} outside grid {self.grid_dims}")

    def flags(self, eta: float | None = None) -> np.ndarray:
        """Boolean grid: blocks judged dissimilar to the reference (score <= eta)."""
        eta = self.eta if eta is None else eta
        out = self.scores <= eta
        out[self.reference] = False
        return out

    def to_json(self) -> dict:
        return {
            "block_size": self.block_size,
            "overlap": self.overlap,
            "grid_dims": list(self.grid_dims),
            "reference": list(self.reference),
            "eta": self.eta,
            "scores": self.scores.tolist(),
            "reliable": self.reliable.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LocalizationMap":
        return cls(
            block_size=int(doc["block_size"]),
            overlap=float(doc["overlap"]),
            grid_dims=tuple(doc["grid_dims"]),
            reference=tuple(doc["reference"]),
            eta=float(doc["eta"]),
            scores=np.asarray(doc["scores"], dtype=np.float64),
            reliable=np.asarray(doc["reliable"], dtype=bool),
        )


def localize(
    image,
    system,
    reference: tuple[int, int],
    eta: float = 0.5,
    block_size: int = DEFAULT_BLOCK_SIZE,
    overlap: float = DEFAULT_OVERLAP,
) -> LocalizationMap:
    """Score every block against the chosen reference block.

    The reference must pass the entropy filter; a rejected reference is a
    signal to pick another block, not a degraded map.
    """
    img = np.asarray(image)
    blocks = tile(img, block_size, overlap)
    rows, cols = grid_shape(img.shape[:2], block_size, overlap)
    r, c = reference
    if not (0 <= r < rows and 0 <= c < cols):
        raise ConfigurationError(f"reference {reference} outside {rows}x{cols} block grid")
    mask = system.reliability_mask(blocks)
    ref_flat = r * cols + c
    if not mask[ref_flat]:
        raise UnreliableReferenceError(
            f"reference block {reference} fails the entropy filter; choose another block"
        )
    feats = system.extractor.extract_batch(blocks)
    ref_feat = np.repeat(feats[ref_flat : ref_flat + 1], len(blocks), axis=0)
    scores = system.similarity.scores(ref_feat, feats)
    return LocalizationMap(
        block_size=block_size,
        overlap=overlap,
        grid_dims=(rows, cols),
        reference=(r, c),
        eta=eta,
        scores=scores.reshape(rows, cols),
        reliable=np.asarray(mask).reshape(rows, cols),
    )


def block_pixel_mask(lmap: LocalizationMap, image_shape, flags: np.ndarray | None = None) -> np.ndarray:
    """Pixel-level union of flagged blocks, for IoU scoring and overlays."""
    flags = lmap.flags() if flags is None else flags
    stride = max(1, int(round(lmap.block_size * (1.0 - lmap.overlap))))
    out = np.zeros(image_shape[:2], dtype=np.uint8)
    rows, cols = lmap.grid_dims
    for r in range(rows):
        for c in range(cols):
            if flags[r, c]:
                r0, c0 = r * stride, c * stride
                out[r0 : r0 + lmap.block_size, c0 : c0 + lmap.block_size] = 1
    return out


def overlay_image(image: np.ndarray, lmap: LocalizationMap, eta: float | None = None) -> np.ndarray:
    """Render the map: red tint on flagged blocks, green outline on the reference."""
    img = np.asarray(image).astype(np.float64)
    flags = lmap.flags(eta)
    mask = block_pixel_mask(lmap, img.shape, flags).astype(bool)
    tinted = img.copy()
    tinted[mask] = 0.55 * img[mask] + 0.45 * np.array([255.0, 0.0, 0.0])
    stride = max(1, int(round(lmap.block_size * (1.0 - lmap.overlap))))
    r, c = lmap.reference
    r0, c0 = r * stride, c * stride
    r1, c1 = r0 + lmap.block_size - 1, c0 + lmap.block_size - 1
    green = np.array([0.0, 255.0, 0.0])
    for t in range(3):
        tinted[r0 + t, c0 : c1 + 1] = green
        tinted[r1 - t, c0 : c1 + 1] = green
        tinted[r0 : r1 + 1, c0 + t] = green
        tinted[r0 : r1 + 1, c1 - t] = green
    return np.clip(np.rint(tinted), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# database consistency


@dataclass
class DatabaseVerdict:
    pair_medians: dict  # (i, j) index pair -> median score
    statistic: float
    threshold: float
    consistent: bool
    image_ids: list
    warnings: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "consistent" if self.consistent else "inconsistent"

    def to_json(self) -> dict:
        return {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "pair_medians": [
                {"pair": [self.image_ids[i], self.image_ids[j]], "median": m}
                for (i, j), m in sorted(self.pair_medians.items())
            ],
            "warnings": list(self.warnings),
        }


def consistency_statistic(medians, m_images: int) -> float:
    """The (M-2)th lowest of the pair medians, counting rank 0 = minimum.

    With one foreign image among M, exactly M-1 pair medians collapse, so
    this rank sits on the largest of them and the statistic drops below
    threshold; an all-consistent database keeps every median high.
    """
    medians = sorted(float(x) for x in medians)
    if not medians:
        raise ConfigurationError("no pair medians to rank")
    rank = m_images - 2
    if not (0 <= rank < len(medians)):
        raise ConfigurationError(
            f"rank {rank} invalid for {len(medians)} pair medians (M={m_images})"
        )
    return medians[rank]


def _select_patches(image, system, patches_per_image: int, image_id):
    """Random filter-passing blocks, seeded by image content so database order
    never changes which patches represent an image."""
    from .tracelab import derived_rng

    size = system.patch_size
    blocks = tile(image, size, 0.5)
    mask = system.reliability_mask(blocks)
    usable = [b for b, ok in zip(blocks, mask) if ok]
    if not usable:
        raise UnreliableImageError(f"image {image_id!r}: no filter-passing {size}px patches")
    rng = derived_rng("verify_db", np.asarray(image))
    if len(usable) > patches_per_image:
        idx = rng.choice(len(usable), size=patches_per_image, replace=False)
        usable = [usable[i] for i in sorted(idx)]
    return usable


def verify_database(
    images,
    system,
    patches_per_image: int = 4,
    threshold: float = 0.5,
    image_ids=None,
    pair_scorer=None,
) -> DatabaseVerdict:
    """Decide whether a set of images all share one capture pipeline.

    For each of the C(M,2) image pairs, the median of the N x N cross-image
    patch scores is computed (scores symmetrized so the verdict cannot
    depend on list order); the decision statistic is the (M-2)th lowest
    median, compared against the threshold (>= threshold = consistent).

    `pair_scorer(image_i, image_j) -> array of cross scores` may replace the
    model path entirely; it is the hook the stubbed-oracle tests use.
    """
    images = list(images)
    m = len(images)
    if m < 2:
        raise ConfigurationError("database verification needs at least 2 images")
    if patches_per_image < 1:
        raise ConfigurationError("patches_per_image must be positive")
    if image_ids is None:
        image_ids = [f"image{i}" for i in range(m)]
    image_ids = list(image_ids)
    if len(image_ids) != m:
        raise ConfigurationError("image_ids length must match image count")

    notes = []
    medians: dict[tuple[int, int], float] = {}
    if pair_scorer is not None:
        for i in range(m):
            for j in range(i + 1, m):
                medians[(i, j)] = float(np.median(np.asarray(pair_scorer(images[i], images[j]))))
    else:
        patch_sets = []
        for img, img_id in zip(images, image_ids):
            chosen = _select_patches(img, system, patches_per_image, img_id)
            if len(chosen) < patches_per_image:
                notes.append(
                    f"{img_id}: only {len(chosen)} of {patches_per_image} requested patches usable"
                )
                warnings.warn(notes[-1], stacklevel=2)
            patch_sets.append(system.extractor.extract_batch(chosen))
        for i in range(m):
            for j in range(i + 1, m):
                fi, fj = patch_sets[i], patch_sets[j]
                na, nb = len(fi), len(fj)
                fa = np.repeat(fi, nb, axis=0)
                fb = np.tile(fj, (na, 1))
                fwd = system.similarity.scores(fa, fb)
                rev = system.similarity.scores(fb, fa)
                medians[(i, j)] = float(np.median((fwd + rev) / 2.0))

    stat = consistency_statistic(medians.values(), m)
    return DatabaseVerdict(
        pair_medians=medians,
        statistic=stat,
        threshold=threshold,
        consistent=stat >= threshold,
        image_ids=image_ids,
        warnings=notes,
    )

"""Synthetic forensic-trace laboratory.

Generates labeled data for training and evaluating trace comparators without
any external image corpus: synthetic scenes, parameterized camera rendering
pipelines (mosaic, demosaic, gamma, sharpen, noise, JPEG), a bank of editing
operations with bounded parameter ranges, balanced pair datasets, spliced
composites, and line-delimited corpus manifests.

Pipelines are grouped into disjoint sets A, B and C: A trains the extractor,
A+B train the pair comparator, C is never trained on and probes open-set
behavior.  The same scene bank is rendered through every pipeline so pixels
differ only by pipeline-induced statistics, never by content.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import cv2
import numpy as np
from PIL import Image, ImageFilter
from scipy.signal import wiener as _scipy_wiener

from .errors import ConfigurationError, DimensionError
from .patches import Patch, center_crop, crop_top_left, tile
from .similarity import PairDataset

# ---------------------------------------------------------------------------
# deterministic sub-seeding


def derived_rng(*parts) -> np.random.Generator:
    """RNG seeded from a stable hash of the given parts (ints, strings, arrays)."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(p.tobytes())
            h.update(str(p.shape).encode())
        else:
            h.update(str(p).encode())
        h.update(b"|")
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"))


# ---------------------------------------------------------------------------
# scenes

SCENE_KINDS = ("textured", "smooth", "flat")


def make_scene(seed: int, size: int = 512, kind: str = "textured") -> np.ndarray:
    """One synthetic RGB photograph-like scene, uint8, (size, size, 3).

    Multi-octave value noise plus a few geometric structures.  "textured"
    scenes land mid-band on the luminance-entropy scale, "smooth" ones lower,
    "flat" ones are near-constant regions whose patches mostly fail the
    entropy filter (needed to exercise the low-entropy evaluation band).
    """
    if kind not in SCENE_KINDS:
        raise ConfigurationError(f"unknown scene kind {kind!r}")
    rng = derived_rng("scene", seed, size, kind)
    img = np.zeros((size, size, 3), dtype=np.float64)
    if kind == "flat":
        base = rng.uniform(20, 235, size=3)
        img += base[None, None, :]
        # faint vignette so the scene is not numerically constant
        yy, xx = np.mgrid[0:size, 0:size] / size
        img += ((yy - 0.5) ** 2 + (xx - 0.5) ** 2)[:, :, None] * rng.uniform(0, 6)
        return _to_uint8(img)

    octaves = (4, 16, 64) if kind == "textured" else (4, 8)
    amps = (90, 45, 22) if kind == "textured" else (70, 25)
    for cells, amp in zip(octaves, amps):
        low = rng.uniform(-1, 1, size=(cells, cells, 3))
        up = cv2.resize(low, (size, size), interpolation=cv2.INTER_CUBIC)
        img += amp * up
    img += rng.uniform(60, 190, size=3)[None, None, :]

    # a few solid shapes give edges and occlusion-like structure
    shapes = rng.integers(2, 5) if kind == "textured" else rng.integers(1, 3)
    for _ in range(shapes):
        color = rng.uniform(10, 245, size=3)
        cx, cy = rng.integers(0, size, size=2)
        if rng.random() < 0.5:
            r = int(rng.integers(size // 16, size // 4))
            cv2.circle(img, (int(cx), int(cy)), r, color.tolist(), thickness=-1)
        else:
            w, h = rng.integers(size // 12, size // 3, size=2)
            cv2.rectangle(
                img,
                (int(cx - w // 2), int(cy - h // 2)),
                (int(cx + w // 2), int(cy + h // 2)),
                color.tolist(),
                thickness=-1,
            )
    if kind == "textured":
        img += rng.normal(0, 3.0, size=img.shape)
    return _to_uint8(img)


def scene_bank(count: int, seed: int, size: int = 512, flat_fraction: float = 0.15, smooth_fraction: float = 0.2):
    """Deterministic list of scenes mixing texture levels."""
    rng = derived_rng("bank", seed, count, size)
    scenes = []
    for i in range(count):
        u = rng.random()
        kind = "flat" if u < flat_fraction else "smooth" if u < flat_fraction + smooth_fraction else "textured"
        scenes.append(make_scene(seed * 100003 + i, size=size, kind=kind))
    return scenes


# ---------------------------------------------------------------------------
# synthetic camera pipelines

CFA_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
_CFA_LAYOUT = {
    # channel index at (row % 2, col % 2)
    "RGGB": ((0, 1), (1, 2)),
    "BGGR": ((2, 1), (1, 0)),
    "GRBG": ((1, 0), (2, 1)),
    "GBRG": ((1, 2), (0, 1)),
}


@dataclass(frozen=True)
class SyntheticCameraModel:
    """One capture pipeline; any field difference yields a distinct trace."""

    id: str
    cfa_pattern: str = "RGGB"
    demosaic_method: str = "bilinear"  # "nearest" | "bilinear"
    gamma: float = 1.0  # encoding exponent; 1.0 = identity
    sharpen_amount: float = 0.0
    noise_std: float = 0.0  # in 8-bit pixel units
    jpeg_quality: int = 95

    def __post_init__(self):
        if self.cfa_pattern not in CFA_PATTERNS:
            raise ConfigurationError(f"unknown CFA pattern {self.cfa_pattern!r}")
        if self.demosaic_method not in ("nearest", "bilinear"):
            raise ConfigurationError(f"unknown demosaic method {self.demosaic_method!r}")
        if not (1 <= self.jpeg_quality <= 100):
            raise ConfigurationError("jpeg_quality must be in [1, 100]")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")


def _cfa_masks(pattern: str, h: int, w: int) -> np.ndarray:
    layout = _CFA_LAYOUT[pattern]
    masks = np.zeros((h, w, 3), dtype=np.float64)
    for r in range(2):
        for c in range(2):
            masks[r::2, c::2, layout[r][c]] = 1.0
    return masks


_G_KERNEL = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_RB_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


def _demosaic(sampled: np.ndarray, masks: np.ndarray, method: str) -> np.ndarray:
    h, w, _ = sampled.shape
    out = np.empty_like(sampled)
    if method == "bilinear":
        for ch, ker in ((0, _RB_KERNEL), (1, _G_KERNEL), (2, _RB_KERNEL)):
            num = cv2.filter2D(sampled[:, :, ch], -1, ker, borderType=cv2.BORDER_REFLECT)
            den = cv2.filter2D(masks[:, :, ch], -1, ker, borderType=cv2.BORDER_REFLECT)
            out[:, :, ch] = num / np.maximum(den, 1e-12)
        return out
    # nearest: replicate each 2x2 cell's sample across the cell
    if h % 2 or w % 2:
        raise DimensionError("nearest demosaic requires even image dimensions")
    for ch in range(3):
        plane = sampled[:, :, ch]
        mask = masks[:, :, ch]
        # average the samples within each 2x2 cell (G has two), then replicate
        cells = plane[0::2, 0::2] + plane[0::2, 1::2] + plane[1::2, 0::2] + plane[1::2, 1::2]
        counts = mask[0::2, 0::2] + mask[0::2, 1::2] + mask[1::2, 0::2] + mask[1::2, 1::2]
        cell_val = cells / np.maximum(counts, 1.0)
        out[:, :, ch] = np.repeat(np.repeat(cell_val, 2, axis=0), 2, axis=1)
    return out


def render_camera(model: SyntheticCameraModel, scene_image: np.ndarray, seed: int = 0) -> np.ndarray:
    """Render a scene through the pipeline: mosaic, demosaic, gamma, sharpen, noise, JPEG."""
    scene = np.asarray(scene_image)
    if scene.ndim != 3 or scene.shape[2] != 3:
        raise DimensionError("scene must be an RGB (H, W, 3) array")
    if scene.shape[0] % 2 or scene.shape[1] % 2:
        scene = scene[: scene.shape[0] // 2 * 2, : scene.shape[1] // 2 * 2]
    x = scene.astype(np.float64)
    h, w, _ = x.shape
    masks = _cfa_masks(model.cfa_pattern, h, w)
    sampled = x * masks
    x = _demosaic(sampled, masks, model.demosaic_method)
    if model.gamma != 1.0:
        x = 255.0 * np.power(np.clip(x, 0, 255) / 255.0, model.gamma)
    if model.sharpen_amount != 0.0:
        blur = cv2.GaussianBlur(x, (3, 3), 1.0, borderType=cv2.BORDER_REFLECT)
        x = x + model.sharpen_amount * (x - blur)
    if model.noise_std > 0:
        rng = derived_rng("sensor", model.id, seed, scene_image)
        x = x + rng.normal(0.0, model.noise_std, size=x.shape)
    img = _to_uint8(x)
    if model.jpeg_quality < 100:
        img = _jpeg_roundtrip(img, model.jpeg_quality)
    return img


def desk_camera_sets() -> dict[str, list[SyntheticCameraModel]]:
    """Eight pipelines partitioned into disjoint sets A (extractor training),
    B (pair training only) and C (never trained)."""
    return {
        # two-axis design: JPEG quality bands (70 / 84 / 96) crossed with
        # sensor-noise levels (0.5 / 3.5 / 6.5); tone curve and sharpening are
        # held fixed so neither offers a shortcut around the pipeline traces
        "A": [
            SyntheticCameraModel("cam_a1", "RGGB", "nearest", 0.55, 0.0, 0.5, 70),
            SyntheticCameraModel("cam_a2", "BGGR", "nearest", 0.55, 0.0, 6.5, 70),
            SyntheticCameraModel("cam_a3", "GRBG", "nearest", 0.55, 0.0, 0.5, 96),
            SyntheticCameraModel("cam_a4", "GBRG", "nearest", 0.55, 0.0, 6.5, 96),
        ],
        "B": [
            SyntheticCameraModel("cam_b1", "RGGB", "bilinear", 0.55, 0.0, 0.5, 84),
            SyntheticCameraModel("cam_b2", "GRBG", "bilinear", 0.55, 0.0, 6.5, 84),
        ],
        "C": [
            SyntheticCameraModel("cam_c1", "BGGR", "nearest", 0.55, 0.0, 3.5, 70),
            SyntheticCameraModel("cam_c2", "GBRG", "nearest", 0.55, 0.0, 3.5, 96),
        ],
    }


# ---------------------------------------------------------------------------
# manipulation bank


@dataclass(frozen=True)
class ManipulationSpec:
    """One editing operation with its bounded parameter range."""

    name: str
    known: bool
    parameter_range: str  # human-readable description of the legal draws

    def sample_parameter(self, rng: np.random.Generator):
        return _SAMPLERS[self.name](rng)

    def validate(self, parameter):
        if not _VALIDATORS[self.name](parameter):
            raise ConfigurationError(
                f"{self.name}: parameter {parameter!r} outside range {self.parameter_range}"
            )


def _resize_sample(rng):
    # scaling factor from [0.6, 0.9] or [1.1, 1.9], area-weighted
    lo_len, hi_len = 0.3, 0.8
    if rng.random() < lo_len / (lo_len + hi_len):
        return float(rng.uniform(0.6, 0.9))
    return float(rng.uniform(1.1, 1.9))


_SAMPLERS = {
    "unaltered": lambda rng: None,
    "resize_bilinear": _resize_sample,
    "gaussian_blur_5x5": lambda rng: float(rng.uniform(1.0, 2.0)),
    "median_blur": lambda rng: int(rng.choice([3, 5, 7])),
    "awg_noise": lambda rng: float(rng.uniform(1.5, 2.5)),
    "jpeg_compression": lambda rng: int(rng.integers(50, 96)),
    "unsharp_mask": lambda rng: int(rng.integers(50, 201)),
    "adaptive_hist_eq": lambda rng: None,
    "wiener_filter": lambda rng: int(rng.choice([3, 5, 7])),
    "web_dither": lambda rng: None,
    "salt_pepper": lambda rng: int(rng.choice([5, 10, 15, 20])),
}

_VALIDATORS = {
    "unaltered": lambda p: p is None,
    "resize_bilinear": lambda p: isinstance(p, (int, float)) and (0.6 <= p <= 0.9 or 1.1 <= p <= 1.9),
    "gaussian_blur_5x5": lambda p: isinstance(p, (int, float)) and 1.0 <= p <= 2.0,
    "median_blur": lambda p: p in (3, 5, 7),
    "awg_noise": lambda p: isinstance(p, (int, float)) and 1.5 <= p <= 2.5,
    "jpeg_compression": lambda p: isinstance(p, (int, np.integer)) and 50 <= p <= 95,
    "unsharp_mask": lambda p: isinstance(p, (int, np.integer)) and 50 <= p <= 200,
    "adaptive_hist_eq": lambda p: p is None,
    "wiener_filter": lambda p: p in (3, 5, 7),
    "web_dither": lambda p: p is None,
    "salt_pepper": lambda p: p in (5, 10, 15, 20),
}

MANIPULATIONS: dict[str, ManipulationSpec] = {
    "unaltered": ManipulationSpec("unaltered", True, "none"),
    "resize_bilinear": ManipulationSpec("resize_bilinear", True, "scale in [0.6,0.9] u [1.1,1.9]"),
    "gaussian_blur_5x5": ManipulationSpec("gaussian_blur_5x5", True, "sigma in [1,2]"),
    "median_blur": ManipulationSpec("median_blur", True, "kernel in {3,5,7}"),
    "awg_noise": ManipulationSpec("awg_noise", True, "sigma in [1.5,2.5] (8-bit units)"),
    "jpeg_compression": ManipulationSpec("jpeg_compression", True, "quality in {50..95}"),
    "unsharp_mask": ManipulationSpec("unsharp_mask", True, "percent in [50,200] (r=2, t=3)"),
    "adaptive_hist_eq": ManipulationSpec("adaptive_hist_eq", True, "8x8 tiles, clip 2.0"),
    "wiener_filter": ManipulationSpec("wiener_filter", False, "kernel in {3,5,7}"),
    "web_dither": ManipulationSpec("web_dither", False, "216-color web palette"),
    "salt_pepper": ManipulationSpec("salt_pepper", False, "percent in {5,10,15,20}"),
}

KNOWN_MANIPULATIONS = [n for n, s in MANIPULATIONS.items() if s.known]
UNKNOWN_MANIPULATIONS = [n for n, s in MANIPULATIONS.items() if not s.known]


def _apply_salt_pepper(img: np.ndarray, percent: int) -> np.ndarray:
    rng = derived_rng("salt_pepper", percent, img)
    out = img.copy()
    h, w, _ = out.shape
    n = int(round(h * w * percent / 100.0))
    flat = rng.choice(h * w, size=n, replace=False)
    rows, cols = np.unravel_index(flat, (h, w))
    values = rng.integers(0, 2, size=n).astype(np.uint8) * 255
    out[rows, cols] = values[:, None]
    return out


def _apply_wiener(img: np.ndarray, k: int) -> np.ndarray:
    x = img.astype(np.float64)
    out = np.empty_like(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        for ch in range(3):
            out[:, :, ch] = _scipy_wiener(x[:, :, ch], mysize=k)
    # zero-variance windows divide by zero inside the estimator; they carry
    # no noise to remove, so pass the original pixels through
    out = np.where(np.isfinite(out), out, x)
    return _to_uint8(out)


def _apply_clahe(img: np.ndarray) -> np.ndarray:
    lab = cv2.cvtColor(img, cv2.COLOR_RGB2LAB)
    clahe = cv2.createCLAHE(clipLimit=2.0, tileGridSize=(8, 8))
    lab[:, :, 0] = clahe.apply(lab[:, :, 0])
    return cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)


def _apply_web_dither(img: np.ndarray) -> np.ndarray:
    pil = Image.fromarray(img, mode="RGB")
    dithered = pil.convert("P", palette=Image.Palette.WEB, dither=Image.Dither.FLOYDSTEINBERG)
    return np.asarray(dithered.convert("RGB"))


def apply_manipulation(patch, spec: ManipulationSpec, parameter=None):
    """Apply one editing operation; deterministic given (pixels, spec, parameter).

    Accepts a Patch or a raw RGB array and preserves the input type.  Every
    operation preserves the pixel geometry except downscaling resizes, whose
    output is simply smaller; callers that need fixed-size network inputs
    re-extract patches from the result (the corpus builders do exactly that).
    Upscaling resizes are center-cropped back to the input size.
    """
    if isinstance(spec, str):
        spec = MANIPULATIONS[spec]
    spec.validate(parameter)
    is_patch = isinstance(patch, Patch)
    img = patch.pixels if is_patch else np.asarray(patch)
    if img.dtype != np.uint8 or img.ndim != 3:
        raise DimensionError("manipulations expect an (H, W, 3) uint8 array")

    name = spec.name
    if name == "unaltered":
        out = img.copy()
    elif name == "resize_bilinear":
        h, w, _ = img.shape
        nh, nw = max(1, round(h * parameter)), max(1, round(w * parameter))
        out = cv2.resize(img, (nw, nh), interpolation=cv2.INTER_LINEAR)
        if parameter > 1.0:
            r0, c0 = (nh - h) // 2, (nw - w) // 2
            out = out[r0 : r0 + h, c0 : c0 + w]
    elif name == "gaussian_blur_5x5":
        out = cv2.GaussianBlur(img, (5, 5), sigmaX=parameter, sigmaY=parameter)
    elif name == "median_blur":
        out = cv2.medianBlur(img, parameter)
    elif name == "awg_noise":
        rng = derived_rng("awg", parameter, img)
        out = _to_uint8(img.astype(np.float64) + rng.normal(0.0, parameter, size=img.shape))
    elif name == "jpeg_compression":
        out = _jpeg_roundtrip(img, parameter)
    elif name == "unsharp_mask":
        pil = Image.fromarray(img, mode="RGB")
        out = np.asarray(pil.filter(ImageFilter.UnsharpMask(radius=2, percent=parameter, threshold=3)))
    elif name == "adaptive_hist_eq":
        out = _apply_clahe(img)
    elif name == "wiener_filter":
        out = _apply_wiener(img, parameter)
    elif name == "web_dither":
        out = _apply_web_dither(img)
    elif name == "salt_pepper":
        out = _apply_salt_pepper(img, parameter)
    else:
        raise ConfigurationError(f"unknown manipulation {name!r}")

    if is_patch:
        return Patch(out, origin=patch.origin, source_id=patch.source_id, trace_label=name)
    return out


def recompress(image: np.ndarray, quality: int) -> np.ndarray:
    """Whole-image JPEG encode/decode round trip at the given quality."""
    if not isinstance(quality, (int, np.integer)) or not (1 <= quality <= 100):
        raise ConfigurationError("JPEG quality must be an integer in [1, 100]")
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError("recompress expects an (H, W, 3) uint8 array")
    return _jpeg_roundtrip(img, quality)


# ---------------------------------------------------------------------------
# patch pools and pair datasets


def camera_patch_pool(
    models,
    scenes,
    patch_size: int,
    overlap: float = 0.0,
    seed: int = 0,
    scene_offset: int = 0,
) -> list[Patch]:
    """Render every scene through every model and tile into labeled patches.

    source_id encodes (model, scene index) so pair builders can keep pairs
    across scenes and bundles can prove train/eval scene disjointness.
    """
    pool: list[Patch] = []
    for model in models:
        for si, scene in enumerate(scenes, start=scene_offset):
            rendered = render_camera(model, scene, seed=seed)
            for p in tile(rendered, patch_size, overlap):
                pool.append(
                    Patch(
                        p.pixels,
                        origin=p.origin,
                        source_id=f"{model.id}:scene{si}",
                        trace_label=model.id,
                    )
                )
    return pool


def _group_by_label(pool):
    groups: dict[str, list[Patch]] = {}
    for p in pool:
        if p.trace_label is None:
            raise ConfigurationError("every pooled patch needs a trace_label")
        groups.setdefault(p.trace_label, []).append(p)
    return groups


def make_pairs(
    patch_pool,
    mode: str,
    count: int,
    same_fraction: float = 0.5,
    seed: int = 0,
    ops=None,
    patch_size: int | None = None,
) -> PairDataset:
    """Balanced labeled pairs for phase B training or evaluation.

    camera mode: label 1 iff both patches share a pipeline id; same-pipeline
    pairs prefer distinct source scenes so content never carries the label.

    manipulation mode: pool entries are oversized regions from one fixed
    pipeline; each side is manipulated independently.  Label 1 means the same
    operation on both sides with independently drawn parameters; `ops` names
    the operations in play and `patch_size` the final network input size.

    parameter mode: both sides are bilinear-resized regions; label 1 iff the
    two scaling factors are equal, drawn from the `ops` list of factors.
    """
    if mode not in ("camera", "manipulation", "parameter"):
        raise ConfigurationError(f"unknown pair mode {mode!r}")
    if not (0.0 <= same_fraction <= 1.0):
        raise ConfigurationError("same_fraction must lie in [0, 1]")
    if count < 1:
        raise ConfigurationError("count must be positive")
    rng = np.random.default_rng(seed)
    n_same = round(same_fraction * count)
    left, right, labels = [], [], []

    if mode == "camera":
        groups = _group_by_label(patch_pool)
        names = sorted(groups)
        if len(names) < 2:
            raise ConfigurationError("camera pairs need at least 2 pipeline labels")
        for k in range(count):
            same = k < n_same
            if same:
                g = names[rng.integers(len(names))]
                a = groups[g][rng.integers(len(groups[g]))]
                others = [p for p in groups[g] if p.source_id != a.source_id]
                b_pool = others if others else groups[g]
                b = b_pool[rng.integers(len(b_pool))]
            else:
                ga, gb = rng.choice(len(names), size=2, replace=False)
                a = groups[names[ga]][rng.integers(len(groups[names[ga]]))]
                b = groups[names[gb]][rng.integers(len(groups[names[gb]]))]
            left.append(a)
            right.append(b)
            labels.append(1 if same else 0)

    else:
        regions = list(patch_pool)
        if len(regions) < 2:
            raise ConfigurationError("need at least 2 source regions")
        if patch_size is None:
            raise ConfigurationError(f"{mode} mode needs an explicit patch_size")
        if mode == "manipulation":
            ops = list(ops) if ops is not None else list(KNOWN_MANIPULATIONS)
            if len(ops) < 2:
                raise ConfigurationError("manipulation pairs need at least 2 operations")

            def produce(region, op):
                spec = MANIPULATIONS[op]
                param = spec.sample_parameter(rng)
                pixels = region.pixels if isinstance(region, Patch) else region
                out = apply_manipulation(pixels, spec, param)
                return Patch(
                    center_crop(out, patch_size),
                    source_id=getattr(region, "source_id", None),
                    trace_label=op,
                ), param

        else:  # parameter mode: resize factors as the trace
            ops = list(ops) if ops is not None else [0.7, 0.8, 1.2, 1.5]
            if len(ops) < 2:
                raise ConfigurationError("parameter pairs need at least 2 factors")
            for s in ops:
                MANIPULATIONS["resize_bilinear"].validate(float(s))

            def produce(region, factor):
                pixels = region.pixels if isinstance(region, Patch) else region
                out = apply_manipulation(pixels, MANIPULATIONS["resize_bilinear"], float(factor))
                return Patch(
                    center_crop(out, patch_size),
                    source_id=getattr(region, "source_id", None),
                    trace_label=f"resize:{factor}",
                ), factor

        for k in range(count):
            same = k < n_same
            ia, ib = rng.choice(len(regions), size=2, replace=False)
            if same:
                op = ops[rng.integers(len(ops))]
                pa, _ = produce(regions[ia], op)
                pb, _ = produce(regions[ib], op)
            else:
                oa, ob = rng.choice(len(ops), size=2, replace=False)
                pa, _ = produce(regions[ia], ops[oa])
                pb, _ = produce(regions[ib], ops[ob])
            left.append(pa)
            right.append(pb)
            labels.append(1 if same else 0)

    # fixed interleave so batches see both labels early
    order = rng.permutation(count)
    return PairDataset(
        [left[i] for i in order],
        [right[i] for i in order],
        np.array([labels[i] for i in order], dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# experiment bundles


@dataclass
class ExperimentBundle:
    """Everything one training-plus-evaluation experiment consumes.

    train/eval scene indices are disjoint by construction and checked, so no
    evaluation pair shares a source scene with training.
    """

    name: str
    patch_size: int
    seed: int
    phase_a_patches: list = field(default_factory=list)
    phase_b_pairs: PairDataset | None = None
    narrow_pairs: PairDataset | None = None
    eval_pairs: dict = field(default_factory=dict)
    pipeline_sets: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def check_disjoint(self):
        train_sources = {p.source_id for p in self.phase_a_patches}
        for ds in filter(None, [self.phase_b_pairs, self.narrow_pairs]):
            train_sources |= {p.source_id for p in ds.left + ds.right}
        for name, ds in self.eval_pairs.items():
            eval_sources = {p.source_id for p in ds.left + ds.right}
            shared = train_sources & eval_sources
            if shared:
                raise ConfigurationError(
                    f"eval split {name!r} shares sources with training: {sorted(shared)[:4]}"
                )

    def manifest(self) -> list[dict]:
        records = []
        for p in self.phase_a_patches:
            records.append(_patch_record(p, "train_a", self.seed))
        for split_name, ds in [("train_b", self.phase_b_pairs), ("train_b_narrow", self.narrow_pairs)]:
            if ds is None:
                continue
            for a, b, y in zip(ds.left, ds.right, ds.labels):
                records.append(_pair_record(a, b, int(y), split_name, self.seed))
        for split_name, ds in sorted(self.eval_pairs.items()):
            for a, b, y in zip(ds.left, ds.right, ds.labels):
                records.append(_pair_record(a, b, int(y), f"eval_{split_name}", self.seed))
        return records

    def manifest_hash(self) -> str:
        blob = "\n".join(json.dumps(r, sort_keys=True) for r in self.manifest())
        return hashlib.sha256(blob.encode()).hexdigest()

    def provenance(self) -> dict:
        return {
            "bundle": self.name,
            "patch_size": self.patch_size,
            "bundle_seed": self.seed,
            "dataset_hash": self.manifest_hash(),
        }


def _patch_record(p: Patch, split: str, seed: int) -> dict:
    return {
        "kind": "patch",
        "label": p.trace_label,
        "source": p.source_id,
        "origin": list(p.origin),
        "split": split,
        "seed": seed,
    }


def _pair_record(a: Patch, b: Patch, label: int, split: str, seed: int) -> dict:
    return {
        "kind": "pair",
        "label": label,
        "left": {"label": a.trace_label, "source": a.source_id, "origin": list(a.origin)},
        "right": {"label": b.trace_label, "source": b.source_id, "origin": list(b.origin)},
        "split": split,
        "seed": seed,
    }


def write_manifest(records, path):
    """Line-delimited JSON, one record per line, stable field order."""
    path = FsPath(path)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    with FsPath(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def build_camera_bundle(
    seed: int = 0,
    patch_size: int = 128,
    train_scenes: int = 24,
    eval_scenes: int = 10,
    scene_size: int = 512,
    patches_per_pipeline: int = 480,
    train_pair_count: int = 1600,
    narrow_pair_count: int = 800,
    eval_pair_count: int = 360,
    tile_overlap: float = 0.0,
) -> ExperimentBundle:
    """The main camera-comparison experiment at desk scale.

    Set A (4 pipelines) feeds extractor pretraining; A+B (6) feed the pair
    phase ("diverse"); B alone is the "narrow" variant; C (2) is evaluation
    only.  Scenes are shared across pipelines within a split and disjoint
    across splits.
    """
    sets = desk_camera_sets()
    bank_train = scene_bank(train_scenes, seed, size=scene_size)
    bank_eval = scene_bank(eval_scenes, seed + 7919, size=scene_size)

    def pool(models, scenes, offset):
        return camera_patch_pool(models, scenes, patch_size, overlap=tile_overlap, seed=seed, scene_offset=offset)

    train_ab = pool(sets["A"] + sets["B"], bank_train, 0)
    eval_all = pool(sets["A"] + sets["B"] + sets["C"], bank_eval, 10_000)

    per_label_cap = max(1, patches_per_pipeline)
    rng = np.random.default_rng(seed + 13)

    def cap(pool_list):
        groups = _group_by_label(pool_list)
        kept = []
        for label in sorted(groups):
            g = groups[label]
            idx = rng.permutation(len(g))[:per_label_cap]
            kept.extend(g[i] for i in sorted(idx))
        return kept

    train_ab = cap(train_ab)
    a_ids = {m.id for m in sets["A"]}
    b_ids = {m.id for m in sets["B"]}
    c_ids = {m.id for m in sets["C"]}
    phase_a = [p for p in train_ab if p.trace_label in a_ids]
    narrow_pool = [p for p in train_ab if p.trace_label in b_ids]

    known_pool = [p for p in eval_all if p.trace_label in a_ids | b_ids]
    unknown_pool = [p for p in eval_all if p.trace_label in c_ids]

    pairs_ab = make_pairs(train_ab, "camera", train_pair_count, seed=seed + 1)
    pairs_narrow = make_pairs(narrow_pool, "camera", narrow_pair_count, seed=seed + 2)
    eval_pairs = {
        "known_known": make_pairs(known_pool, "camera", eval_pair_count, seed=seed + 3),
        "unknown_unknown": make_pairs(unknown_pool, "camera", eval_pair_count, seed=seed + 4),
        "known_unknown": _cross_set_pairs(known_pool, unknown_pool, eval_pair_count, seed + 5),
    }

    bundle = ExperimentBundle(
        name="camera_desk",
        patch_size=patch_size,
        seed=seed,
        phase_a_patches=phase_a,
        phase_b_pairs=pairs_ab,
        narrow_pairs=pairs_narrow,
        eval_pairs=eval_pairs,
        pipeline_sets={"A": sorted(a_ids), "B": sorted(b_ids), "C": sorted(c_ids)},
    )
    bundle.check_disjoint()
    return bundle


def _cross_set_pairs(known_pool, unknown_pool, count: int, seed: int) -> PairDataset:
    """Pairs with one known-side and one unknown-side patch (always different trace)."""
    rng = np.random.default_rng(seed)
    left, right = [], []
    for _ in range(count):
        left.append(known_pool[rng.integers(len(known_pool))])
        right.append(unknown_pool[rng.integers(len(unknown_pool))])
    return PairDataset(left, right, np.zeros(count, dtype=np.int64))


def build_recompression_eval(
    qualities=(95, 75),
    seed: int = 0,
    patch_size: int = 128,
    scenes: int = 6,
    scene_size: int = 512,
    pair_count: int = 240,
    tile_overlap: float = 0.0,
) -> dict[int, PairDataset]:
    """Held-out camera pairs cut after whole-image JPEG recompression.

    Images from the trained-family pipelines are recompressed at each quality
    before patch extraction, probing how much pipeline trace survives a second
    compression.  Scene stream is disjoint from the camera-bundle streams.
    """
    sets = desk_camera_sets()
    models = sets["A"] + sets["B"]
    bank = scene_bank(scenes, seed + 91_000, size=scene_size)
    out: dict[int, PairDataset] = {}
    for q in qualities:
        pool = []
        for model in models:
            for si, scene in enumerate(bank, start=20_000):
                img = recompress(render_camera(model, scene, seed=seed), int(q))
                for p in tile(img, patch_size, tile_overlap):
                    pool.append(
                        Patch(
                            p.pixels,
                            origin=p.origin,
                            source_id=f"{model.id}:scene{si}",
                            trace_label=model.id,
                        )
                    )
        out[int(q)] = make_pairs(pool, "camera", pair_count, seed=seed + q)
    return out


def region_pool(
    scenes,
    model: SyntheticCameraModel,
    region_size: int,
    seed: int = 0,
    scene_offset: int = 0,
) -> list[Patch]:
    """Oversized single-pipeline regions used as manipulation-pair sources."""
    pool = []
    for si, scene in enumerate(scenes, start=scene_offset):
        rendered = render_camera(model, scene, seed=seed)
        for p in tile(rendered, region_size, 0.0):
            pool.append(Patch(p.pixels, origin=p.origin, source_id=f"{model.id}:scene{si}", trace_label="base"))
    return pool


def build_manipulation_bundle(
    seed: int = 0,
    patch_size: int = 128,
    region_size: int = 256,
    train_scenes: int = 12,
    eval_scenes: int = 6,
    scene_size: int = 512,
    known_ops=("unaltered", "resize_bilinear", "median_blur", "jpeg_compression"),
    unknown_op: str = "salt_pepper",
    train_pair_count: int = 1400,
    eval_pair_count: int = 320,
) -> ExperimentBundle:
    """Editing-operation comparison: same base pipeline, trace = manipulation.

    Training pairs draw from `known_ops`; the unknown split involves an
    operation never seen in training (at least one side manipulated by it).
    """
    for op in list(known_ops) + [unknown_op]:
        if op not in MANIPULATIONS:
            raise ConfigurationError(f"unknown manipulation {op!r}")
    if unknown_op in known_ops:
        raise ConfigurationError("the held-out operation must not be in the training set")
    base_model = SyntheticCameraModel("manip_base", "RGGB", "bilinear", 0.45, 0.3, 2.0, 95)
    regions_train = region_pool(scene_bank(train_scenes, seed + 31, size=scene_size), base_model, region_size, seed)
    regions_eval = region_pool(
        scene_bank(eval_scenes, seed + 57_000, size=scene_size), base_model, region_size, seed, scene_offset=10_000
    )

    train_pairs = make_pairs(
        regions_train, "manipulation", train_pair_count, seed=seed + 1, ops=known_ops, patch_size=patch_size
    )
    eval_known = make_pairs(
        regions_eval, "manipulation", eval_pair_count, seed=seed + 2, ops=known_ops, patch_size=patch_size
    )
    eval_unknown = _unknown_op_pairs(
        regions_eval, list(known_ops), unknown_op, eval_pair_count, seed + 3, patch_size
    )

    bundle = ExperimentBundle(
        name="manipulation_desk",
        patch_size=patch_size,
        seed=seed,
        phase_a_patches=[],
        phase_b_pairs=train_pairs,
        eval_pairs={"known": eval_known, "unknown": eval_unknown},
        pipeline_sets={"known_ops": sorted(known_ops), "unknown_op": [unknown_op]},
    )
    bundle.check_disjoint()
    return bundle


def _unknown_op_pairs(regions, known_ops, unknown_op, count, seed, patch_size) -> PairDataset:
    """Pairs where the held-out operation appears on at least one side.

    Same pairs: unknown op on both sides (independent parameters).  Different
    pairs: unknown op against a random known op.
    """
    rng = np.random.default_rng(seed)
    spec_u = MANIPULATIONS[unknown_op]
    left, right, labels = [], [], []

    def produce(region, op_name):
        spec = MANIPULATIONS[op_name]
        param = spec.sample_parameter(rng)
        out = apply_manipulation(region.pixels, spec, param)
        return Patch(center_crop(out, patch_size), source_id=region.source_id, trace_label=op_name)

    n_same = count // 2
    for k in range(count):
        ia, ib = rng.choice(len(regions), size=2, replace=False)
        if k < n_same:
            left.append(produce(regions[ia], unknown_op))
            right.append(produce(regions[ib], unknown_op))
            labels.append(1)
        else:
            other = known_ops[rng.integers(len(known_ops))]
            if rng.random() < 0.5:
                left.append(produce(regions[ia], unknown_op))
                right.append(produce(regions[ib], other))
            else:
                left.append(produce(regions[ia], other))
                right.append(produce(regions[ib], unknown_op))
            labels.append(0)
    order = rng.permutation(count)
    return PairDataset([left[i] for i in order], [right[i] for i in order], np.array(labels)[order])


# ---------------------------------------------------------------------------
# splices


def make_splice(
    host_image: np.ndarray,
    donor_image: np.ndarray,
    seed: int = 0,
    insert_fraction: float = 0.38,
) -> tuple[np.ndarray, np.ndarray]:
    """Paste a rectangular donor region into the host; returns (composite, mask).

    The mask is uint8 {0,1}, 1 on inserted pixels.  Host and donor must share
    dimensions; the insert is axis-aligned with side length a fixed fraction
    of the image so localization grids see several fully-inside blocks.
    """
    host = np.asarray(host_image)
    donor = np.asarray(donor_image)
    if host.shape != donor.shape:
        raise DimensionError("host and donor must have identical shapes")
    h, w, _ = host.shape
    side_r = max(1, int(round(h * insert_fraction)))
    side_c = max(1, int(round(w * insert_fraction)))
    rng = np.random.default_rng(seed)
    r0 = int(rng.integers(0, h - side_r + 1))
    c0 = int(rng.integers(0, w - side_c + 1))
    composite = host.copy()
    composite[r0 : r0 + side_r, c0 : c0 + side_c] = donor[r0 : r0 + side_r, c0 : c0 + side_c]
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[r0 : r0 + side_r, c0 : c0 + side_c] = 1
    return composite, mask


@dataclass
class SpliceCase:
    image: np.ndarray
    mask: np.ndarray | None  # None for clean images
    host_id: str
    donor_id: str | None

    @property
    def forged(self) -> bool:
        return self.mask is not None


def splice_corpus(
    forged_count: int = 20,
    clean_count: int = 12,
    seed: int = 0,
    scene_size: int = 512,
    models=None,
) -> list[SpliceCase]:
    """Two-pipeline composites plus clean single-pipeline images."""
    if models is None:
        sets = desk_camera_sets()
        models = sets["A"] + sets["B"]
    if len(models) < 2:
        raise ConfigurationError("need at least two pipelines to splice")
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(forged_count):
        scene = make_scene(seed * 31 + k, size=scene_size, kind="textured")
        ih, idn = rng.choice(len(models), size=2, replace=False)
        host = render_camera(models[ih], scene, seed=seed + k)
        donor = render_camera(models[idn], scene, seed=seed + k)
        composite, mask = make_splice(host, donor, seed=seed * 77 + k)
        cases.append(SpliceCase(composite, mask, models[ih].id, models[idn].id))
    for k in range(clean_count):
        scene = make_scene(seed * 131 + 50_000 + k, size=scene_size, kind="textured")
        im = rng.integers(len(models))
        img = render_camera(models[im], scene, seed=seed + 999 + k)
        cases.append(SpliceCase(img, None, models[im].id, None))
    return cases

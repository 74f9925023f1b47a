"""HTTP/JSON service wrapping comparison, localization and block scoring.

Designed for a single analyst session: images are uploaded once, the full
block-pair score matrix is computed once per (image, model) and cached, and
every later localization or re-threshold request is served from that cache.
Protocol errors are 400 (malformed request), 422 (well-formed but unusable:
too-small image, entropy-rejected patch), 404 (unknown identifier).
"""

from __future__ import annotations

import base64
import binascii
import io
import secrets
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from . import checkpoint as ckpt
from .apps import LocalizationMap
from .errors import ForensimError, UnreliablePatchError
from .extractor import ExtractorModel
from .patches import Patch, center_crop, entropy, grid_shape, tile
from .similarity import SimilaritySystem

MAX_UPLOAD_BYTES = 32 * 1024 * 1024
DEFAULT_OVERLAP = 0.5


class _ApiError(Exception):
    def __init__(self, status: int, error: str, message: str):
        super().__init__(message)
        self.status = status
        self.error = error
        self.message = message


def _bad_request(message: str) -> _ApiError:
    return _ApiError(400, "malformed", message)


def _unprocessable(message: str) -> _ApiError:
    return _ApiError(422, "unusable_input", message)


def _not_found(message: str) -> _ApiError:
    return _ApiError(404, "unknown_id", message)


@dataclass
class ModelEntry:
    model_id: str
    system: SimilaritySystem
    summary: dict
    source_path: str | None = None


@dataclass
class ServerState:
    models: dict = field(default_factory=dict)
    default_model_id: str | None = None
    images: dict = field(default_factory=dict)  # image_id -> uint8 array
    matrices: dict = field(default_factory=dict)  # (image_id, model_id) -> dict


def _summarize(system: SimilaritySystem, model_id: str, path: str | None) -> dict:
    ext = system.extractor
    return {
        "model_id": model_id,
        "patch_size": ext.config.patch_size,
        "scale_profile": ext.config.scale_profile,
        "feature_dim": ext.config.feature_dim,
        "phase": "AB",
        "threshold": system.threshold,
        "entropy_thresholds": [
            system.entropy_thresholds.min_nats,
            system.entropy_thresholds.max_nats,
        ],
        "head_convention": ckpt.HEAD_CONVENTION,
        "path": path,
        "provenance": {
            "extractor": system.extractor.provenance,
            "similarity": system.similarity.provenance,
        },
    }


# ---------------------------------------------------------------------------
# request bodies


class UploadRequest(BaseModel, extra="forbid"):
    image_b64: str
    model_id: str | None = None


class BlockRef(BaseModel, extra="forbid"):
    image_id: str
    block: list[int]


class CompareRequest(BaseModel, extra="forbid"):
    image_a_b64: str | None = None
    image_b_b64: str | None = None
    patch_a: BlockRef | None = None
    patch_b: BlockRef | None = None
    eta: float | None = None
    model_id: str | None = None


class LocalizeRequest(BaseModel, extra="forbid"):
    image_id: str
    ref_block: list[int]
    eta: float | None = None
    model_id: str | None = None


class MatrixRequest(BaseModel, extra="forbid"):
    image_id: str
    model_id: str | None = None


class LoadModelRequest(BaseModel, extra="forbid"):
    path: str
    make_default: bool = True


# ---------------------------------------------------------------------------
# app factory


def create_app(
    systems: dict[str, SimilaritySystem] | None = None,
    model_paths=None,
    overlap: float = DEFAULT_OVERLAP,
) -> FastAPI:
    """Build the service; models come from live objects and/or checkpoint files."""
    app = FastAPI(title="forensic similarity service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    state = ServerState()
    app.state.forensim = state

    for model_id, system in (systems or {}).items():
        state.models[model_id] = ModelEntry(model_id, system, _summarize(system, model_id, None))
        state.default_model_id = state.default_model_id or model_id
    for path in model_paths or []:
        _load_model_file(state, str(path), make_default=state.default_model_id is None)

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        detail = "; ".join(
            f"{'.'.join(str(p) for p in e.get('loc', []))}: {e.get('msg', 'invalid')}" for e in exc.errors()
        )
        return JSONResponse(status_code=400, content={"error": "malformed", "message": detail})

    @app.exception_handler(_ApiError)
    async def _api_error_handler(request: Request, exc: _ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.error, "message": exc.message})

    @app.exception_handler(ForensimError)
    async def _domain_error_handler(request: Request, exc: ForensimError):
        status = 422 if isinstance(exc, UnreliablePatchError) else 400
        return JSONResponse(
            status_code=status, content={"error": type(exc).__name__, "message": str(exc)}
        )

    # -- models ------------------------------------------------------------

    @app.get("/v1/models")
    async def list_models():
        return {
            "models": [
                {**entry.summary, "default": mid == state.default_model_id}
                for mid, entry in sorted(state.models.items())
            ]
        }

    @app.post("/v1/models")
    async def load_model(body: LoadModelRequest):
        try:
            entry = _load_model_file(state, body.path, body.make_default)
        except FileNotFoundError:
            raise _not_found(f"checkpoint file {body.path} not found")
        return {"model_id": entry.model_id, "default": state.default_model_id == entry.model_id}

    # -- images ------------------------------------------------------------

    @app.post("/v1/images")
    async def upload_image(body: UploadRequest):
        system, model_id = _resolve_model(state, body.model_id)
        image = _decode_image(body.image_b64)
        size = system.patch_size
        if image.shape[0] < size or image.shape[1] < size:
            raise _unprocessable(
                f"image {image.shape[0]}x{image.shape[1]} is smaller than the model patch size {size}"
            )
        image_id = secrets.token_hex(8)
        state.images[image_id] = image
        geom = _geometry(image, system)
        return {
            "image_id": image_id,
            "width": int(image.shape[1]),
            "height": int(image.shape[0]),
            "model_id": model_id,
            "grid": geom["grid"],
            "blocks": geom["blocks"],
        }

    @app.post("/v1/score-matrix")
    async def score_matrix(body: MatrixRequest):
        system, model_id = _resolve_model(state, body.model_id)
        image = _image_or_404(state, body.image_id)
        cached = _matrix_for(state, body.image_id, model_id, image, system)
        return {
            "image_id": body.image_id,
            "model_id": model_id,
            "grid": cached["grid"],
            "reliable": cached["reliable"],
            "scores": cached["scores"],
        }

    @app.post("/v1/localize")
    async def localize_blocks(body: LocalizeRequest):
        system, model_id = _resolve_model(state, body.model_id)
        image = _image_or_404(state, body.image_id)
        if len(body.ref_block) != 2:
            raise _bad_request("ref_block must be [row, col]")
        cached = _matrix_for(state, body.image_id, model_id, image, system)
        rows, cols = cached["grid"]["rows"], cached["grid"]["cols"]
        r, c = body.ref_block
        if not (0 <= r < rows and 0 <= c < cols):
            raise _unprocessable(f"ref_block {body.ref_block} outside the {rows}x{cols} grid")
        flat = r * cols + c
        if not cached["reliable"][flat]:
            raise _unprocessable(
                f"reference block {body.ref_block} fails the entropy filter; choose another block"
            )
        eta = system.threshold if body.eta is None else body.eta
        if not (0.0 <= eta <= 1.0):
            raise _unprocessable(f"eta must lie in [0, 1], got {eta}")
        lmap = LocalizationMap(
            block_size=system.patch_size,
            overlap=cached["grid"]["overlap"],
            grid_dims=(rows, cols),
            reference=(r, c),
            eta=eta,
            scores=np.asarray(cached["scores"])[flat].reshape(rows, cols),
            reliable=np.asarray(cached["reliable"]).reshape(rows, cols),
        )
        doc = lmap.to_json()
        doc["image_id"] = body.image_id
        doc["model_id"] = model_id
        doc["flagged"] = [[bool(v) for v in row] for row in lmap.flags()]
        return doc

    # -- compare -----------------------------------------------------------

    @app.post("/v1/compare")
    async def compare_patches(body: CompareRequest):
        system, model_id = _resolve_model(state, body.model_id)
        by_upload = body.image_a_b64 is not None and body.image_b_b64 is not None
        by_ref = body.patch_a is not None and body.patch_b is not None
        if by_upload == by_ref:
            raise _bad_request(
                "provide either image_a_b64 + image_b_b64 or patch_a + patch_b references"
            )
        if by_upload:
            pa = _uploaded_patch(body.image_a_b64, system, "image_a")
            pb = _uploaded_patch(body.image_b_b64, system, "image_b")
        else:
            pa = _referenced_patch(state, body.patch_a, system)
            pb = _referenced_patch(state, body.patch_b, system)
        eta = system.threshold if body.eta is None else body.eta
        if not (0.0 <= eta <= 1.0):
            raise _unprocessable(f"eta must lie in [0, 1], got {eta}")
        for name, p in (("first", pa), ("second", pb)):
            h = entropy(p.pixels)
            if not system.entropy_thresholds.contains(h):
                raise _unprocessable(f"{name} patch entropy {h:.3f} outside the reliability band")
        score = system.score_pair(pa, pb)
        decision = score > eta
        return {
            "score": score,
            "decision": "similar" if decision else "different",
            "decision_bit": 1 if decision else 0,
            "eta": eta,
            "model_id": model_id,
        }

    return app


# ---------------------------------------------------------------------------
# helpers


def _load_model_file(state: ServerState, path: str, make_default: bool) -> ModelEntry:
    loaded = ckpt.load_checkpoint(path)
    if isinstance(loaded, ExtractorModel):
        raise _unprocessable(f"{path} holds a phase-A extractor; the service needs a full comparator")
    model_id = ckpt.checkpoint_id(path)
    entry = ModelEntry(model_id, loaded, _summarize(loaded, model_id, path), source_path=path)
    state.models[model_id] = entry
    if make_default or state.default_model_id is None:
        state.default_model_id = model_id
    # drop caches for model ids no longer loaded (reload gives a new content id)
    live = set(state.models)
    for key in [k for k in state.matrices if k[1] not in live]:
        del state.matrices[key]
    return entry


def _resolve_model(state: ServerState, model_id: str | None):
    mid = model_id or state.default_model_id
    if mid is None:
        raise _unprocessable("no models are loaded")
    if mid not in state.models:
        raise _not_found(f"unknown model_id {mid!r}")
    return state.models[mid].system, mid


def _image_or_404(state: ServerState, image_id: str) -> np.ndarray:
    if image_id not in state.images:
        raise _not_found(f"unknown image_id {image_id!r}")
    return state.images[image_id]


def _decode_image(b64: str) -> np.ndarray:
    if len(b64) > MAX_UPLOAD_BYTES:
        raise _bad_request("image payload too large")
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _bad_request(f"image_b64 is not valid base64: {exc}")
    try:
        img = Image.open(io.BytesIO(raw))
        return np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise _bad_request(f"payload is not a decodable image: {exc}")


def _geometry(image: np.ndarray, system: SimilaritySystem) -> dict:
    size = system.patch_size
    blocks = tile(image, size, DEFAULT_OVERLAP)
    rows, cols = grid_shape(image.shape[:2], size, DEFAULT_OVERLAP)
    stride = max(1, int(round(size * (1.0 - DEFAULT_OVERLAP))))
    entries = []
    for i, b in enumerate(blocks):
        h = entropy(b.pixels)
        entries.append(
            {
                "index": i,
                "row": i // cols,
                "col": i % cols,
                "origin": list(b.origin),
                "entropy": h,
                "reliable": bool(system.entropy_thresholds.contains(h)),
            }
        )
    return {
        "grid": {
            "rows": rows,
            "cols": cols,
            "block_size": size,
            "overlap": DEFAULT_OVERLAP,
            "stride": stride,
        },
        "blocks": entries,
    }


def _matrix_for(state, image_id, model_id, image, system) -> dict:
    key = (image_id, model_id)
    if key not in state.matrices:
        blocks = tile(image, system.patch_size, DEFAULT_OVERLAP)
        geom = _geometry(image, system)
        matrix = system.score_matrix(blocks)
        state.matrices[key] = {
            "grid": geom["grid"],
            "reliable": [b["reliable"] for b in geom["blocks"]],
            "scores": matrix.tolist(),
        }
    return state.matrices[key]


def _uploaded_patch(b64: str, system: SimilaritySystem, name: str) -> Patch:
    image = _decode_image(b64)
    size = system.patch_size
    if image.shape[0] < size or image.shape[1] < size:
        raise _unprocessable(f"{name} is smaller than the model patch size {size}")
    return Patch(center_crop(image, size))


def _referenced_patch(state: ServerState, ref: BlockRef, system: SimilaritySystem) -> Patch:
    image = _image_or_404(state, ref.image_id)
    if len(ref.block) != 2:
        raise _bad_request("block must be [row, col]")
    size = system.patch_size
    rows, cols = grid_shape(image.shape[:2], size, DEFAULT_OVERLAP)
    r, c = ref.block
    if not (0 <= r < rows and 0 <= c < cols):
        raise _unprocessable(f"block {ref.block} outside the {rows}x{cols} grid")
    stride = max(1, int(round(size * (1.0 - DEFAULT_OVERLAP))))
    return Patch(
        image[r * stride : r * stride + size, c * stride : c * stride + size],
        origin=(r * stride, c * stride),
        source_id=ref.image_id,
    )

"""Model checkpoints: one file holding extractor (+ similarity) weights.

Layout: 8-byte magic, 4-byte little-endian manifest length, UTF-8 JSON
manifest, then every weight array as little-endian float32 in manifest
order.  The manifest is rendered deterministically (sorted keys, fixed
separators, no timestamps) and carries a SHA-256 of the payload, so
load-then-save reproduces the file byte for byte and corruption is caught
before any model is built.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
    DimensionError,
)
from .extractor import ConvBlockSpec, ExtractorConfig, ExtractorModel
from .patches import EntropyThresholds
from .similarity import SimilarityConfig, SimilarityModel, SimilaritySystem

MAGIC = b"FRNSMCKP"
FORMAT_VERSION = 1
HEAD_CONVENTION = {"similar_index": 1, "different_index": 0}


def _extractor_config_dict(config: ExtractorConfig) -> dict:
    d = asdict(config)
    d["conv_blocks"] = [asdict(b) for b in config.conv_blocks]
    return d


def _extractor_config_from(d: dict) -> ExtractorConfig:
    blocks = tuple(ConvBlockSpec(**b) for b in d["conv_blocks"])
    rest = {k: v for k, v in d.items() if k != "conv_blocks"}
    rest["fc_widths"] = tuple(rest["fc_widths"])
    return ExtractorConfig(conv_blocks=blocks, **rest)


def _array_entries(model) -> list[tuple[str, np.ndarray]]:
    entries = []
    if isinstance(model, SimilaritySystem):
        entries.extend((f"extractor/param/{k}", v) for k, v in model.extractor.params().items())
        entries.extend((f"extractor/buffer/{k}", v) for k, v in model.extractor.buffers().items())
        entries.extend((f"similarity/param/{k}", v) for k, v in model.similarity.params().items())
    elif isinstance(model, ExtractorModel):
        entries.extend((f"extractor/param/{k}", v) for k, v in model.params().items())
        entries.extend((f"extractor/buffer/{k}", v) for k, v in model.buffers().items())
    else:
        raise ConfigurationError(f"cannot checkpoint object of type {type(model).__name__}")
    return sorted(entries, key=lambda kv: kv[0])


def save_checkpoint_bytes(model) -> bytes:
    """Serialize a SimilaritySystem or a phase-A ExtractorModel."""
    entries = _array_entries(model)
    payload = io.BytesIO()
    array_meta = []
    for name, arr in entries:
        data = np.ascontiguousarray(arr, dtype="<f4")
        payload.write(data.tobytes())
        array_meta.append({"name": name, "shape": list(arr.shape)})
    payload_bytes = payload.getvalue()

    if isinstance(model, SimilaritySystem):
        extractor = model.extractor
        manifest_extra = {
            "phase": "AB",
            "similarity_config": asdict(model.similarity.config),
            "threshold": model.threshold,
            "entropy_thresholds": [model.entropy_thresholds.min_nats, model.entropy_thresholds.max_nats],
            "provenance": {
                "extractor": _jsonable(extractor.provenance),
                "similarity": _jsonable(model.similarity.provenance),
            },
        }
    else:
        extractor = model
        manifest_extra = {"phase": "A", "provenance": {"extractor": _jsonable(extractor.provenance)}}

    manifest = {
        "format_version": FORMAT_VERSION,
        "patch_size": extractor.config.patch_size,
        "scale_profile": extractor.config.scale_profile,
        "head_convention": HEAD_CONVENTION,
        "training_precision": getattr(extractor, "training_precision", np.dtype(extractor.dtype).name),
        "extractor_config": _extractor_config_dict(extractor.config),
        "arrays": array_meta,
        "payload_sha256": hashlib.sha256(payload_bytes).hexdigest(),
        **manifest_extra,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(len(manifest_bytes).to_bytes(4, "little"))
    out.write(manifest_bytes)
    out.write(payload_bytes)
    return out.getvalue()


def _jsonable(value):
    try:
        json.dumps(value)
        return value
    except TypeError:
        return json.loads(json.dumps(value, default=str))


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(save_checkpoint_bytes(model))


def read_manifest(path) -> dict:
    """Manifest alone, without constructing models."""
    data = Path(path).read_bytes()
    manifest, _ = _split(data)
    return manifest


def checkpoint_id(path_or_bytes) -> str:
    """Stable short identifier for a checkpoint's exact contents."""
    data = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    return hashlib.sha256(data).hexdigest()[:16]


def _split(data: bytes) -> tuple[dict, bytes]:
    if len(data) < len(MAGIC) + 4:
        raise CheckpointTruncatedError("file shorter than the fixed header")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    mlen = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 4], "little")
    m_start = len(MAGIC) + 4
    if len(data) < m_start + mlen:
        raise CheckpointTruncatedError("manifest truncated")
    try:
        manifest = json.loads(data[m_start : m_start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"manifest unreadable: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"format version {version!r}, expected {FORMAT_VERSION}")
    return manifest, data[m_start + mlen :]


def load_checkpoint_bytes(data: bytes):
    """Rebuild the saved model; returns SimilaritySystem or ExtractorModel."""
    manifest, payload = _split(data)
    expected = sum(int(np.prod(a["shape"])) * 4 for a in manifest["arrays"])
    if len(payload) < expected:
        raise CheckpointTruncatedError(f"payload holds {len(payload)} bytes, manifest promises {expected}")
    if len(payload) > expected:
        raise CheckpointError(f"{len(payload) - expected} trailing bytes after the weight payload")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["payload_sha256"]:
        raise CheckpointChecksumError("weight payload digest mismatch; file is corrupt")

    try:
        config = _extractor_config_from(manifest["extractor_config"])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointError(f"invalid extractor config in manifest: {exc}") from exc
    extractor = ExtractorModel(config, seed=0, dtype=np.float32)
    extractor.provenance = manifest.get("provenance", {}).get("extractor", {})
    extractor.training_precision = manifest["training_precision"]

    sim = None
    if manifest["phase"] == "AB":
        sim_config = SimilarityConfig(**manifest["similarity_config"])
        sim = SimilarityModel(sim_config, seed=0, dtype=np.float32)
        sim.provenance = manifest.get("provenance", {}).get("similarity", {})

    offset = 0
    for meta in manifest["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += count * 4
        scope, kind, name = meta["name"].split("/", 2)
        try:
            if scope == "extractor":
                extractor.set_param(name, arr)
            elif scope == "similarity":
                if sim is None:
                    raise CheckpointError("similarity weights present in a phase-A checkpoint")
                sim.set_param(name, arr)
            else:
                raise CheckpointError(f"unknown array scope {scope!r}")
        except (DimensionError, ConfigurationError) as exc:
            raise CheckpointShapeError(f"{meta['name']}: {exc}") from exc

    if sim is None:
        return extractor
    lo, hi = manifest["entropy_thresholds"]
    return SimilaritySystem(
        extractor=extractor,
        similarity=sim,
        threshold=float(manifest["threshold"]),
        entropy_thresholds=EntropyThresholds(float(lo), float(hi)),
    )


def load_checkpoint(path):
    return load_checkpoint_bytes(Path(path).read_bytes())

"""Runtime settings resolved from flags, environment, config file, defaults.

Precedence (highest wins): explicit command-line flags, FORENSIM_* environment
variables, a JSON config file, built-in defaults.  Every resolved value
remembers which layer supplied it so `--show-config` style debugging stays
honest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

ENV_PREFIX = "FORENSIM_"


def _as_int(s):
    return int(s)


def _as_float(s):
    return float(s)


def _as_str(s):
    return str(s)


# field name -> (parser, default)
_SCHEMA = {
    "model": (_as_str, None),
    "eta": (_as_float, 0.5),
    "threshold": (_as_float, 0.5),
    "patch_size": (_as_int, 128),
    "seed": (_as_int, 0),
    "entropy_min": (_as_float, 1.8),
    "entropy_max": (_as_float, 5.2),
    "overlap": (_as_float, 0.5),
}


@dataclass
class Settings:
    model: str | None = None
    eta: float = 0.5
    threshold: float = 0.5
    patch_size: int = 128
    seed: int = 0
    entropy_min: float = 1.8
    entropy_max: float = 5.2
    overlap: float = 0.5
    sources: dict = field(default_factory=dict)

    def validate(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigurationError(f"eta must lie in [0, 1], got {self.eta}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ConfigurationError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.patch_size not in (128, 256):
            raise ConfigurationError(f"patch_size must be 128 or 256, got {self.patch_size}")
        if not (0.0 <= self.entropy_min < self.entropy_max <= math.log(256.0) + 1e-12):
            raise ConfigurationError(
                f"entropy band [{self.entropy_min}, {self.entropy_max}] must satisfy 0 <= min < max <= ln(256)"
            )
        if not (0.0 <= self.overlap < 1.0):
            raise ConfigurationError(f"overlap must lie in [0, 1), got {self.overlap}")
        return self


def _read_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise ConfigurationError(f"config file {path}: unknown keys {sorted(unknown)}")
    return doc


def resolve_settings(
    flags: dict | None = None,
    config_path: str | None = None,
    env=None,
) -> Settings:
    """Merge the four layers; `flags` entries with value None count as unset."""
    env = os.environ if env is None else env
    flags = flags or {}
    if config_path is None:
        config_path = flags.get("config") or env.get(ENV_PREFIX + "CONFIG")
    file_values = _read_config_file(config_path) if config_path else {}

    values, sources = {}, {}
    for name, (parse, default) in _SCHEMA.items():
        env_key = ENV_PREFIX + name.upper()
        if flags.get(name) is not None:
            values[name], sources[name] = flags[name], "flag"
        elif env_key in env:
            try:
                values[name] = parse(env[env_key])
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"{env_key}={env[env_key]!r}: {exc}") from exc
            sources[name] = "env"
        elif name in file_values:
            try:
                values[name] = parse(file_values[name]) if file_values[name] is not None else None
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"config file key {name}={file_values[name]!r}: {exc}") from exc
            sources[name] = "file"
        else:
            values[name], sources[name] = default, "default"
    return Settings(**values, sources=sources).validate()


def settings_record(s: Settings) -> dict:
    out = {}
    for f in fields(s):
        if f.name == "sources":
            continue
        out[f.name] = {"value": getattr(s, f.name), "source": s.sources.get(f.name, "default")}
    return out

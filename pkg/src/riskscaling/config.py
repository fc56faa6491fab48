"""Run configuration: file loading, environment overrides, manifests.

Precedence, lowest to highest: built-in defaults, config file, environment
variables, command-line flags. Environment variables use the prefix
``RISKSCALING_`` and a double underscore to descend into nested keys, so
``RISKSCALING_SOLVER__TOL=1e-5`` sets ``solver.tol``. Values are parsed as
YAML scalars, which gives ints, floats and booleans their natural types.

Every command writes a JSON manifest next to its outputs carrying the fully
resolved configuration, its hash, the seed and the library versions. The
manifest contains no timestamps, so re-running a configuration reproduces
it byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from typing import Any, Mapping, Optional

import yaml

from .errors import ConfigError

ENV_PREFIX = "RISKSCALING_"
ENV_SEPARATOR = "__"

# CLI-wide defaults, documented in the README
DEFAULT_M = 1_000_000


def load_config_file(path: str) -> dict:
    """Parse a YAML config file into a plain dict. Top level must be a map."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping at top level")
    return data


_ENV_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")


def _parse_env_value(raw: str) -> Any:
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw
    # YAML 1.1 leaves exponent forms without a dot ("1e-5") as strings
    if isinstance(value, str) and _ENV_NUMBER.match(value.strip()):
        return float(value)
    return value


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict:
    """Nested dict built from RISKSCALING_* environment variables."""
    if environ is None:
        environ = os.environ
    result: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        trail = name[len(ENV_PREFIX):]
        if not trail:
            continue
        keys = [part.lower() for part in trail.split(ENV_SEPARATOR) if part]
        if not keys:
            continue
        node = result
        for key in keys[:-1]:
            nxt = node.setdefault(key, {})
            if not isinstance(nxt, dict):
                raise ConfigError(
                    f"environment variable {name} descends into non-mapping key {key!r}"
                )
            node = nxt
        node[keys[-1]] = _parse_env_value(raw)
    return result


def merge_config(base: Mapping, override: Mapping) -> dict:
    """Deep merge: override wins, nested maps merge recursively."""
    merged = dict(base)
    for key, value in override.items():
        if key in merged and isinstance(merged[key], Mapping) and isinstance(value, Mapping):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = value
    return merged


def reject_unknown_keys(data: Mapping, allowed: set, context: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown {context} keys {unknown}; allowed keys are {sorted(allowed)}"
        )


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved parameters of one command invocation.

    ``data`` holds nested command parameters; ``config_path`` records where
    the file layer came from, and ``env_applied`` which variables overrode
    it. The whole object is serialized into the run manifest.
    """

    data: dict
    config_path: Optional[str] = None
    env_applied: tuple[str, ...] = ()

    @staticmethod
    def resolve(
        config_path: Optional[str] = None,
        environ: Optional[Mapping[str, str]] = None,
        flags: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """Layer file, environment and flag values in precedence order.

        ``flags`` entries with value None are treated as not given.
        """
        file_layer = load_config_file(config_path) if config_path else {}
        env_layer = env_overrides(environ)
        data = merge_config(file_layer, env_layer)
        if flags:
            given = {k: v for k, v in flags.items() if v is not None}
            data = merge_config(data, given)
        applied = tuple(
            name
            for name in sorted(environ.keys() if environ is not None else os.environ.keys())
            if name.startswith(ENV_PREFIX)
        )
        return RunConfig(data=data, config_path=config_path, env_applied=applied)

    def section(self, name: str) -> dict:
        value = self.data.get(name, {})
        if not isinstance(value, Mapping):
            raise ConfigError(f"config section {name!r} must be a mapping")
        return dict(value)

    def _fetch(self, key: str, default: Any, required: bool) -> Any:
        if key in self.data:
            return self.data[key]
        if required:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_int(self, key: str, default: Optional[int] = None, required: bool = False) -> Optional[int]:
        value = self._fetch(key, default, required)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value

    def get_float(self, key: str, default: Optional[float] = None, required: bool = False) -> Optional[float]:
        value = self._fetch(key, default, required)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)

    def get_str(self, key: str, default: Optional[str] = None, required: bool = False) -> Optional[str]:
        value = self._fetch(key, default, required)
        if value is None:
            return None
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        return value


def canonical_json(data: Any) -> str:
    """Deterministic JSON used for hashing and manifest emission."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def library_versions() -> dict:
    import numpy
    import pandas
    import scipy

    from . import __version__

    return {
        "riskscaling": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
    }


def write_manifest(
    path: str,
    resolved: Mapping,
    seed: int,
    outputs: list,
    extra: Optional[Mapping] = None,
) -> dict:
    """Write the reproducibility manifest and return its content.

    No timestamps on purpose: identical configuration must give identical
    manifest bytes.
    """
    body: dict = {
        "config": dict(resolved),
        "config_sha256": config_hash(resolved),
        "seed": seed,
        "versions": library_versions(),
        "outputs": sorted(outputs),
    }
    if extra:
        body.update(extra)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(body, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return body

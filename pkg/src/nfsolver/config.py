"""Experiment configuration: YAML files plus dotted-path CLI overrides.

A run's effective settings are the config file contents with `--set a.b=v`
overrides applied on top (overrides win).  Every command persists the
resolved settings next to its outputs so artifacts are self-describing and
re-derivable; the output directory itself is not part of the snapshot.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigError, FormatError

SNAPSHOT_NAME = "resolved_config.yaml"


def load_config_file(path) -> dict:
    """Parse a YAML mapping; a missing path argument yields an empty config."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: invalid YAML ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping at the top level")
    return data


def parse_override(text: str) -> tuple[list[str], object]:
    """Split 'a.b.c=value' into its key path and a YAML-parsed value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, _, raw = text.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw != "" else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r} has an unparseable value") from exc
    return key.split("."), value


def apply_overrides(config: dict, overrides) -> dict:
    """Return a deep copy of config with each dotted override applied."""
    result = copy.deepcopy(config)
    for text in overrides or ():
        path, value = parse_override(text)
        node = result
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(
                    f"override {text!r} descends into non-mapping key {part!r}"
                )
            node = child
        node[path[-1]] = value
    return result


def write_snapshot(config: dict, out_dir) -> Path:
    """Persist the resolved config (sorted keys, so reruns are byte-equal)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / SNAPSHOT_NAME
    target.write_text(
        yaml.safe_dump(config, sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )
    return target


def require(config: dict, key: str, context: str):
    if key not in config:
        raise ConfigError(f"{context} config needs a {key!r} entry")
    return config[key]

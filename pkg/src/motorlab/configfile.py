"""Flat key=value config files, hashing, and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
from typing import Mapping


class ConfigError(ValueError):
    """Raised for unreadable, malformed, or incomplete configuration."""


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    """Parse a flat config file of ``key = value`` lines.

    Blank lines and ``#`` comments are ignored. Duplicate keys are an error.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write_kv(path: str | os.PathLike, mapping: Mapping[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {value}\n")


def parse_float(mapping: Mapping[str, str], key: str, source: str = "config") -> float:
    if key not in mapping:
        raise ConfigError(f"{source}: missing required key {key!r}")
    try:
        return float(mapping[key])
    except ValueError as exc:
        raise ConfigError(f"{source}: key {key!r} is not a number: {mapping[key]!r}") from exc


def parse_int(mapping: Mapping[str, str], key: str, source: str = "config") -> int:
    value = parse_float(mapping, key, source)
    if value != int(value):
        raise ConfigError(f"{source}: key {key!r} must be an integer, got {mapping[key]!r}")
    return int(value)


def parse_bool(mapping: Mapping[str, str], key: str, default: bool, source: str = "config") -> bool:
    if key not in mapping:
        return default
    value = mapping[key].strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{source}: key {key!r} is not a boolean: {mapping[key]!r}")


def sha256_file(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str | os.PathLike, command: str, *,
                   configs: Mapping[str, str] | None = None,
                   seeds: Mapping[str, int] | None = None,
                   checkpoint: str | None = None,
                   extra: Mapping[str, object] | None = None) -> str:
    """Record how a run was invoked, before any long computation starts.

    ``configs`` maps a role name to a file path; each entry is stored with
    its sha256 so the run can be reproduced from the manifest alone.
    """
    from . import __version__

    manifest: dict[str, object] = {
        "command": command,
        "tool_version": __version__,
        "output_dir": os.fspath(out_dir),
        "configs": {
            name: {"path": os.fspath(path), "sha256": sha256_file(path)}
            for name, path in (configs or {}).items()
        },
        "seeds": dict(seeds or {}),
    }
    if checkpoint is not None:
        manifest["checkpoint"] = {"path": os.fspath(checkpoint), "sha256": sha256_file(checkpoint)}
    if extra:
        manifest.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(os.fspath(out_dir), "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path

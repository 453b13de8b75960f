"""Loader for qpu_kit.json and the flag-over-file precedence rules."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from qpu_kit.errors import ConfigError
from qpu_kit.schemas import RunConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path("qpu_kit.json")

_cached_config: RunConfig | None = None
_cached_path: str | None = None


def load_run_config(path: Path | str | None = None) -> RunConfig:
    """Load and validate a run config file.

    Results are cached per path. A missing or unreadable file falls back to
    the built-in defaults; a file that parses but violates the schema raises
    :class:`ConfigError`.
    """
    global _cached_config, _cached_path

    explicit = path is not None
    resolved = str(path or DEFAULT_CONFIG_PATH)

    if _cached_config is not None and _cached_path == resolved:
        logger.debug("Returning cached RunConfig from %s", resolved)
        return _cached_config

    cfg: RunConfig
    if not Path(resolved).is_file():
        log = logger.warning if explicit else logger.debug
        log("Config file not found: %s, using built-in defaults", resolved)
        cfg = RunConfig()
    else:
        try:
            raw = json.loads(Path(resolved).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError) as exc:
            logger.warning(
                "Failed to read config %s (%s), using built-in defaults", resolved, exc
            )
            cfg = RunConfig()
        else:
            try:
                cfg = RunConfig.model_validate(raw)
            except ValidationError as exc:
                logger.error("Invalid config schema in %s:\n%s", resolved, exc)
                raise ConfigError(f"invalid config {resolved}: {exc.error_count()} error(s)") from exc
            logger.info(
                "Loaded run config from %s: model=%s, n_edges=%d, epochs=%d",
                resolved,
                cfg.train.model.value,
                cfg.data.n_edges,
                cfg.train.epochs,
            )

    _cached_config = cfg
    _cached_path = resolved
    return cfg


def clear_cache() -> None:
    """Reset the cached config."""
    global _cached_config, _cached_path
    _cached_config = None
    _cached_path = None


def merge_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Apply dotted-key overrides (``"train.epochs"``); ``None`` values are skipped."""
    data = cfg.model_dump()
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value
    try:
        merged = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid setting: {exc.errors()[0]['loc']}: {exc.errors()[0]['msg']}") from exc
    return merged

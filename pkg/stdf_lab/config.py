import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from .errors import ConfigurationError

load_dotenv()

OUT_DIR = os.environ.get("STDF_LAB_OUT_DIR", "out")
LOG_LEVEL = os.environ.get("STDF_LAB_LOG_LEVEL", "INFO")
DEFAULT_WORKERS = (
    int(os.environ.get("STDF_LAB_WORKERS", "0")) or os.cpu_count() or 1
)

OTLP_ENDPOINT = os.environ.get("STDF_LAB_OTLP_ENDPOINT", "")
OTLP_HEADERS = os.environ.get("STDF_LAB_OTLP_HEADERS", "")

LOGGER = logging.getLogger(__name__)


def otlp_headers() -> Dict[str, str]:
    """Parse `key=value,key=value` into a header mapping."""
    headers = {}
    for item in filter(None, (part.strip() for part in OTLP_HEADERS.split(","))):
        key, _, value = item.partition("=")
        headers[key.strip()] = value.strip()
    return headers


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """Read a JSON run configuration; a run manifest replays its `config` block."""
    if not path:
        return {}

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exception:
        raise ConfigurationError(
            f"cannot read config {path}: {exception}"
        ) from exception

    try:
        loaded = json.loads(text)
    except json.JSONDecodeError as exception:
        raise ConfigurationError(
            f"{path}: line {exception.lineno} column {exception.colno}: "
            f"{exception.msg}"
        ) from exception

    if not isinstance(loaded, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")

    if "manifest_version" in loaded:
        LOGGER.info("Replaying configuration from manifest %s", path)
        loaded = loaded.get("config", {})

    return loaded


def merge_overrides(
    base: Dict[str, Any], overrides: Dict[str, Any]
) -> Dict[str, Any]:
    """Flags win: every override that is not None replaces the file value."""
    merged = dict(base)
    merged.update(
        {key: value for key, value in overrides.items() if value is not None}
    )
    return merged


def require(
    config: Dict[str, Any], field: str, kind: type, where: str = "config"
) -> Any:
    """Fetch a mandatory field and coerce it, naming the field on failure."""
    if config.get(field) is None:
        raise ConfigurationError(f"{where}: missing required field '{field}'")

    try:
        return kind(config[field])
    except (TypeError, ValueError) as exception:
        raise ConfigurationError(
            f"{where}: field '{field}' expected {kind.__name__}, "
            f"got {config[field]!r}"
        ) from exception


def optional(config: Dict[str, Any], field: str, kind: type, default: Any) -> Any:
    if config.get(field) is None:
        return default

    try:
        return kind(config[field])
    except (TypeError, ValueError) as exception:
        raise ConfigurationError(
            f"config: field '{field}' expected {kind.__name__}, "
            f"got {config[field]!r}"
        ) from exception

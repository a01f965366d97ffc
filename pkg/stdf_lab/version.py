import functools
import hashlib
import json
import os
from typing import Any, Dict


@functools.lru_cache(maxsize=None)
def get_version() -> str:
    directory = os.path.dirname(os.path.realpath(__file__))
    version_filename = f"{directory}/../VERSION"

    if not os.path.isfile(version_filename):
        return "0+unknown"

    with open(version_filename, "r", encoding="utf-8") as version_file:
        version = version_file.read().rstrip("\n")

    return version


def canonical_json(config: Dict[str, Any]) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)


def get_config_hash(config: Dict[str, Any]) -> str:
    """Short digest identifying a resolved configuration in manifests and file names."""
    return hashlib.sha1(canonical_json(config).encode()).hexdigest()[:10]

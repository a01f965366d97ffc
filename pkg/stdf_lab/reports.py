"""CSV and JSON persistence for reports and run manifests."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from .deviation_harness import DeviationReport
from .version import get_config_hash, get_version

LOGGER = logging.getLogger(__name__)

MANIFEST_VERSION = 1
FLOAT_FORMAT = "%.17g"


def _clean(payload: Any) -> Any:
    """NaN and infinities become null so the JSON stays standard."""
    if isinstance(payload, float) and not math.isfinite(payload):
        return None
    if isinstance(payload, dict):
        return {key: _clean(value) for key, value in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [_clean(value) for value in payload]
    return payload


def save_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(_clean(payload), handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    LOGGER.debug("Wrote %d rows to %s", len(frame), path)
    return path


def write_deviation_report(
    report: DeviationReport, out_dir: Path, stem: str
) -> List[Path]:
    """<stem>.trials.csv (long format), <stem>.summary.csv, <stem>.meta.json."""
    out_dir = Path(out_dir)
    metadata = dict(report.metadata)
    if report.fit is not None:
        low, high = report.fit.band
        metadata["fit"] = {
            "slope": report.fit.slope,
            "stderr": report.fit.stderr,
            "intercept": report.fit.intercept,
            "band_95": [low, high],
        }

    return [
        write_frame(report.trials, out_dir / f"{stem}.trials.csv"),
        write_frame(report.summary, out_dir / f"{stem}.summary.csv"),
        save_json(out_dir / f"{stem}.meta.json", metadata),
    ]


@dataclass
class RunManifest:
    subcommand: str
    config: Dict[str, Any]
    seed: Optional[int]
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    duration_s: float = 0.0
    tool_version: str = field(default_factory=get_version)
    manifest_version: int = MANIFEST_VERSION

    @property
    def config_hash(self) -> str:
        return get_config_hash({"subcommand": self.subcommand, **self.config})

    def write(self, out_dir: Path, stem: str) -> Path:
        payload = asdict(self)
        payload["config_hash"] = self.config_hash
        return save_json(Path(out_dir) / f"{stem}.manifest.json", payload)

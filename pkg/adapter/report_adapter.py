import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app_utils import rows_to_csv

logger = logging.getLogger('report_adapter')

OUTPUT_FORMATS = ("json", "csv")


@dataclass
class Report:
    """A command result ready for serialization.

    `payload` is the JSON document; `rows` and `fieldnames` the CSV table.
    """
    command: str
    payload: Dict[str, Any]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    fieldnames: List[str] = field(default_factory=list)
    sidecars: Dict[str, "Report"] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"command": self.command, **self.payload}


def _plain(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays to JSON types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        # same double as its 17-digit rendering
        return float(f"{value:.17g}")
    return value


class ReportAdapter:
    def __init__(self, output_dir: str = "."):
        self.output_dir = output_dir or "."
        logger.info("ReportAdapter initialized with output directory: %s", self.output_dir)

    def resolve_path(self, path: Optional[str]) -> Optional[str]:
        if path is None or path == "-":
            return None
        if os.path.isabs(path):
            return path
        return os.path.join(self.output_dir, path)

    def render(self, report: Report, fmt: str) -> str:
        if fmt not in OUTPUT_FORMATS:
            raise ValueError(f"Unsupported format: {fmt}")
        if fmt == "json":
            return json.dumps(_plain(report.to_dict()), indent=2, allow_nan=False) + "\n"
        buffer = io.StringIO()
        rows_to_csv(report.rows, report.fieldnames, buffer)
        return buffer.getvalue()

    def _write(self, text: str, path: Optional[str]) -> Optional[str]:
        target = self.resolve_path(path)
        if target is None:
            sys.stdout.write(text)
            sys.stdout.flush()
            return None
        directory = os.path.dirname(target)
        if directory and not os.path.exists(directory):
            os.makedirs(directory)
        with open(target, "w", newline="") as f:
            f.write(text)
        return target

    def save(self, report: Report, fmt: str = "json", path: Optional[str] = None) -> Optional[str]:
        """Write the report (and its sidecars) to `path`, or stdout when None."""
        try:
            target = self._write(self.render(report, fmt), path)
            for suffix, sidecar in report.sidecars.items():
                if target is None:
                    logger.warning("Sidecar %s skipped: main output went to stdout", suffix)
                    continue
                root, ext = os.path.splitext(os.path.abspath(target))
                self._write(self.render(sidecar, fmt), f"{root}_{suffix}{ext or '.' + fmt}")
            logger.info(
                "%s report saved to %s at %s",
                report.command, target or "stdout", datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
            )
            return target
        except OSError as e:
            logger.error("Failed to save %s report: %s", report.command, str(e))
            raise

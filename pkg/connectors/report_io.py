"""JSON documents written by the toolkit: run reports, prune maps, conflict reports."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from connectors.adapter_file import write_atomic
from utils.errors import ArtifactIOError, FormatError

SIGNIFICANT_DIGITS = 12
TIMINGS_KEY = "timings"


def round_significant(value: float, digits: int = SIGNIFICANT_DIGITS) -> float:
    if value == 0.0 or not math.isfinite(value):
        return float(value)
    return float(f"{value:.{digits}g}")


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types with every float cut to 12 significant digits."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round_significant(float(obj))
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str | Path, obj: Any) -> None:
    write_atomic(path, dumps(obj).encode("utf-8"))


def write_report(path: str | Path, report: Any) -> None:
    """Deterministic key order; the ``timings`` block is the only run-dependent part."""
    write_json(path, report)


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, e.strerror or str(e)) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(path, expected="JSON", found=str(e), field="document") from e
    if not isinstance(data, dict):
        raise FormatError(path, expected="a JSON object", found=type(data).__name__, field="document")
    return data


def strip_timings(report: Mapping[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in report.items() if k != TIMINGS_KEY}

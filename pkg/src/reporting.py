"""The {config, rows, summary} envelope every CLI run emits, as JSON or CSV."""

import io
import json
from enum import Enum
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .errors import DomainError


class Report(BaseModel):
    config: dict[str, Any] = Field(default_factory=dict)
    rows: list[dict[str, Any]] = Field(default_factory=list)
    summary: dict[str, Any] = Field(default_factory=dict)


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, (tuple, set)):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _shortest(x) -> str:
    return repr(float(x))


def to_json(report: Report) -> str:
    # repr of a float is its shortest round-trip form: the exact double, deterministic
    try:
        return json.dumps(report.model_dump(), sort_keys=True, indent=2, allow_nan=False, default=_jsonable)
    except ValueError as e:
        raise DomainError(f"report holds a non-finite number: {e}") from e


def to_csv(report: Report) -> str:
    """Rows only, one header line; nested values are flattened with '.' separators.

    Floats use the same shortest round-trip form as the JSON output.
    """
    rows = json.loads(to_json(report))["rows"]
    frame = pd.json_normalize(rows) if rows else pd.DataFrame()
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=_shortest, lineterminator="\n")
    return buffer.getvalue()


def from_json(text: str) -> Report:
    return Report.model_validate_json(text)

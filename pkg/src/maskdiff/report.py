"""JSON reports: canonical serialisation, content hash and schema validation."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

ARTIFACT_VERSION = "0.1.0"

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "maskdiff report",
    "type": "object",
    "required": ["command", "artifact_version", "config_hash", "metrics", "tables", "timings", "passed"],
    "properties": {
        "command": {"type": "string"},
        "artifact_version": {"type": "string"},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "metrics": {"type": "object", "additionalProperties": {"type": "number"}},
        "tables": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "object"}},
        },
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
        "passed": {"type": "boolean"},
        "info": {"type": "object"},
    },
    "additionalProperties": False,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


class Report:
    def __init__(self, command: str, config_hash: str):
        self.command = command
        self.config_hash = config_hash
        self.metrics: dict[str, float] = {}
        self.tables: dict[str, list] = {}
        self.timings: dict[str, float] = {}
        self.info: dict = {}
        self.passed = True

    def metric(self, name: str, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"metric {name} is not finite: {value}")
        self.metrics[name] = value

    def check(self, name: str, ok: bool):
        """Record a named assertion; any failure marks the whole report as failed."""
        self.info.setdefault("checks", {})[name] = bool(ok)
        self.passed = self.passed and bool(ok)

    def to_dict(self, include_timings: bool = True) -> dict:
        doc = {
            "command": self.command,
            "artifact_version": ARTIFACT_VERSION,
            "config_hash": self.config_hash,
            "metrics": self.metrics,
            "tables": self.tables,
            "timings": self.timings if include_timings else {},
            "passed": self.passed,
            "info": self.info,
        }
        return _plain(doc)

    def canonical(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def content_hash(self) -> str:
        """sha256 of the canonical report without wall-clock timings."""
        return hashlib.sha256(self.canonical(include_timings=False).encode()).hexdigest()

    def validate(self):
        jsonschema.validate(self.to_dict(), REPORT_SCHEMA)

    def write(self, path) -> Path:
        self.validate()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.canonical() + "\n")
        return path

"""JSON run reports and matrix files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import ShapeError

VERSION = "0.1.0"
TIMING_FIELDS = ("seconds",)


def _clean(value):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        return _clean(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


@dataclass
class RunReport:
    command: str
    dims: dict
    seed: int | None
    records: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    version: str = VERSION

    def add(self, name: str, *, fidelity=None, postselect_prob=None, max_abs_error=None,
            seconds=None, passed=None, **info) -> dict:
        rec = {"name": name, "fidelity": fidelity, "postselect_prob": postselect_prob,
               "max_abs_error": max_abs_error, "seconds": seconds}
        if passed is not None:
            rec["passed"] = bool(passed)
        rec.update(info)
        self.records.append(_clean(rec))
        return self.records[-1]

    def extend(self, stage_records) -> None:
        """Append :class:`~qformer.transformer.StageRecord` objects."""
        for r in stage_records:
            self.records.append(_clean(r.to_dict()))

    @property
    def ok(self) -> bool:
        return all(r.get("passed", True) for r in self.records)

    def failures(self) -> list[str]:
        return [r["name"] for r in self.records if r.get("passed") is False]

    def to_dict(self, timing: bool = True) -> dict:
        out = {"command": self.command, "dims": self.dims, "seed": self.seed,
               "records": self.records, "version": self.version}
        if self.extra:
            out["extra"] = self.extra
        out = _clean(out)
        return out if timing else strip_timing(out)

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "RunReport":
        return cls(payload["command"], payload["dims"], payload["seed"],
                   list(payload.get("records", [])), dict(payload.get("extra", {})),
                   payload.get("version", VERSION))

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())


def strip_timing(payload: Any) -> Any:
    """Copy of a report payload with every timing field removed."""
    if isinstance(payload, dict):
        return {k: strip_timing(v) for k, v in payload.items() if k not in TIMING_FIELDS}
    if isinstance(payload, list):
        return [strip_timing(v) for v in payload]
    return payload


def load_matrix(path) -> np.ndarray:
    """Real matrix from JSON: a nested list, or ``{"shape": [...], "data": [...]}``."""
    payload = json.loads(Path(path).read_text())
    try:
        if isinstance(payload, dict):
            if "X" in payload:
                payload = payload["X"]
            else:
                return np.asarray(payload["data"], dtype=float).reshape(payload["shape"])
        M = np.asarray(payload, dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeError(f"{path}: not a real matrix ({exc})") from exc
    if M.ndim != 2:
        raise ShapeError(f"{path}: expected a 2-d matrix, got shape {M.shape}")
    return M


def save_matrix(path, M) -> None:
    Path(path).write_text(json.dumps(np.asarray(M, dtype=float).tolist()))

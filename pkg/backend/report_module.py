import os
import json
import logging
from dataclasses import is_dataclass
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from backend.core import MODULE_VERSION, SCHEMA_VERSION, Infinite, _jsonable
from backend.loglog_module import LogLogValue

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.10g"


def to_plain(value):
    """Dataclasses, numpy values, LogLogValue and INFINITE to JSON-ready data."""
    if isinstance(value, LogLogValue):
        return value.to_json()
    if isinstance(value, Infinite):
        return "inf"
    if hasattr(value, "to_dict") and callable(value.to_dict):
        return to_plain(value.to_dict())
    if is_dataclass(value) and not isinstance(value, type):
        return to_plain({k: getattr(value, k) for k in value.__dataclass_fields__})
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return _jsonable(value)


class ReportWriter:
    """Writes versioned JSON reports and tidy CSV tables into one output directory."""

    def __init__(self, directory: str, config_hash: str, subcommand: str, formats: Iterable[str] = ("json", "csv")):
        self.directory = directory
        self.config_hash = config_hash
        self.subcommand = subcommand
        self.formats = tuple(formats)
        self.written: List[str] = []
        os.makedirs(directory, exist_ok=True)

    def envelope(self, payload, flags: Optional[list] = None) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "module_version": MODULE_VERSION,
            "config_hash": self.config_hash,
            "subcommand": self.subcommand,
            "flags": sorted(set(flags or [])),
            "payload": to_plain(payload),
        }

    def write_json(self, name: str, payload, flags: Optional[list] = None) -> Optional[str]:
        if "json" not in self.formats:
            return None
        path = os.path.join(self.directory, f"{name}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.envelope(payload, flags), f, indent=2, sort_keys=True)
            f.write("\n")
        self.written.append(path)
        logger.info("report written to %s", path)
        return path

    def write_csv(self, name: str, rows: List[dict]) -> Optional[str]:
        if "csv" not in self.formats:
            return None
        path = os.path.join(self.directory, f"{name}.csv")
        frame = pd.DataFrame([flatten(to_plain(r)) for r in rows])
        if not frame.empty:
            frame = frame.reindex(sorted(frame.columns), axis=1)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
        self.written.append(path)
        logger.info("table written to %s (%d rows)", path, len(frame))
        return path

    def write_field(self, name: str, field_) -> str:
        path = os.path.join(self.directory, f"{name}.field")
        field_.dump(path)
        self.written.append(path)
        if "csv" in self.formats:
            csv_path = os.path.join(self.directory, f"{name}_nodes.csv")
            field_.to_csv(csv_path)
            self.written.append(csv_path)
        return path


def flatten(record: dict, prefix: str = "") -> dict:
    """Nested dicts to dotted columns; lists are kept as JSON strings."""
    out = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        elif isinstance(value, list):
            out[name] = json.dumps(value, sort_keys=True)
        else:
            out[name] = value
    return out


if __name__ == "__main__":
    from rich import print
    w = ReportWriter("results_demo", "0" * 64, "demo")
    print(f"[info] {w.write_json('demo', {'x': LogLogValue.exp_exp(800.0)})}")

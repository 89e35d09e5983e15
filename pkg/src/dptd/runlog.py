"""Per-iteration run records and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

COLUMNS = ("t", "nu_t", "F_value", "mspbe", "metric_m1", "metric_m2", "metric_m3")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


@dataclass
class RunLog:
    header: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        if self.rows and row["t"] <= self.rows[-1]["t"]:
            raise ValueError("rows must be strictly increasing in t")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in COLUMNS])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        path.with_suffix(".json").write_text(
            json.dumps(self.header, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8"
        )

    @classmethod
    def read(cls, path: str | Path) -> "RunLog":
        path = Path(path)
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COLUMNS:
                raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
            rows = [
                {k: (int(v) if k == "t" else (float(v) if v != "" else None)) for k, v in r.items()}
                for r in reader
            ]
        hdr_path = path.with_suffix(".json")
        header = json.loads(hdr_path.read_text(encoding="utf-8")) if hdr_path.exists() else {}
        return cls(header, rows)


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, float) and math.isnan(obj):
        return None
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def content_hash(data: bytes) -> str:
    """Git-style blob hash."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

"""Tabular reports: CSV for machines, aligned text for people.

Wall-clock measurements never enter the CSV/text payloads; they go to a
``*.timing.json`` sidecar so repeated runs produce identical report files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


def config_hash(meta) -> str:
    raw = json.dumps(meta, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    return str(value)


@dataclass
class Report:
    title: str
    rows: list
    meta: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def columns(self) -> list:
        cols: list = []
        for row in self.rows:
            cols.extend(k for k in row if k not in cols)
        return cols

    @property
    def config_hash(self) -> str:
        return config_hash(self.meta)

    def to_csv(self) -> str:
        cols = self.columns
        lines = [
            f"# report={self.title}",
            f"# config_hash={self.config_hash}",
            f"# seeds={_fmt(self.meta.get('seeds', self.meta.get('seed', '')))}",
            "# meta=" + json.dumps(self.meta, sort_keys=True, separators=(",", ":"), default=str),
            ",".join(cols),
        ]
        lines += [",".join(_fmt(row.get(c, "")) for c in cols) for row in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cols = [c for c in self.columns if not c.endswith("_repeats") and c != "windows_digest"]
        cells = [[_short(row.get(c, "")) for c in cols] for row in self.rows]
        widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(cols)]
        out = [f"{self.title}  (config {self.config_hash}, seeds {_fmt(self.meta.get('seeds', ''))})"]
        out.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        out.append("  ".join("-" * w for w in widths))
        out += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
        out += [f"note: {n}" for n in self.notes]
        return "\n".join(out) + "\n"

    def write(self, out_dir, stem: str) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{stem}.csv", "txt": out / f"{stem}.txt", "timing": out / f"{stem}.timing.json"}
        paths["csv"].write_text(self.to_csv())
        paths["txt"].write_text(self.to_text())
        paths["timing"].write_text(json.dumps(self.timing, sort_keys=True, indent=2) + "\n")
        return paths

"""Published BD-rate and complexity tables as read-only fixtures.

BD-rate tables (ids II, III, IV, V, VII) hold per-sequence BD-rate
reductions of four codecs against the HEVC anchor; table VI (alias VIII)
holds MACs per pixel and parameter counts. Aggregating the per-sequence
cells reproduces the printed class means and averages.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Optional

from .report import BDReport, aggregate_report

COMPLEXITY_TABLE = "VI"
TABLE_ALIASES = {"VIII": COMPLEXITY_TABLE}
METRIC_ALIASES = {"ms-ssim": "msssim", "msssim": "msssim", "psnr": "psnr", "vmaf": "vmaf"}
COMPLEXITY_KEYS = {"params": "params_m", "parameters": "params_m", "params_m": "params_m",
                   "macs": "macs_per_pixel_m", "macs_per_pixel": "macs_per_pixel_m",
                   "macs_per_pixel_m": "macs_per_pixel_m"}


class FixtureError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ReferenceTables:
    def __init__(self, data: dict):
        self.anchor = data["anchor"]
        self.codecs = tuple(data["codecs"])
        self.tables = data["tables"]

    @staticmethod
    def table_id(table) -> str:
        tid = str(table).strip().upper()
        tid = TABLE_ALIASES.get(tid, tid)
        return tid

    def table(self, table) -> dict:
        tid = self.table_id(table)
        if tid not in self.tables:
            raise FixtureError(f"no table {table!r}; available: {', '.join(self.ids)}")
        return self.tables[tid]

    @property
    def ids(self) -> tuple:
        return tuple(self.tables)

    @property
    def bd_ids(self) -> tuple:
        return tuple(t for t, v in self.tables.items() if v["kind"] == "bd-rate")

    def _column(self, codec: str) -> int:
        try:
            return self.codecs.index(codec.upper())
        except ValueError:
            raise FixtureError(f"no codec {codec!r}; available: {', '.join(self.codecs)}") from None

    def lookup(self, table, codec: str, key: str, metric: Optional[str] = None) -> float:
        """BD-rate percent for (table, codec, sequence), or a complexity figure for (table, codec, key)."""
        t = self.table(table)
        if t["kind"] == "complexity":
            row = t["rows"].get(codec.upper())
            if row is None:
                raise FixtureError(f"no complexity row for {codec!r}; available: {', '.join(t['rows'])}")
            field = COMPLEXITY_KEYS.get(key.lower())
            if field is None:
                raise FixtureError(f"unknown complexity key {key!r}; use params or macs")
            return float(row[field])
        if metric is not None and METRIC_ALIASES.get(metric.lower(), metric.lower()) != t["metric"]:
            raise FixtureError(f"table {table} reports {t['metric']}, not {metric}")
        col = self._column(codec)
        for s in t["sequences"]:
            if s["name"].lower() == key.lower():
                return float(s["bd"][col])
        raise FixtureError(f"no sequence {key!r} in table {table}")

    def cells(self) -> dict:
        """Every BD-rate cell keyed by (table, codec, sequence, metric)."""
        out = {}
        for tid in self.bd_ids:
            t = self.tables[tid]
            for s in t["sequences"]:
                for codec, v in zip(self.codecs, s["bd"]):
                    out[(tid, codec, s["name"], t["metric"])] = float(v)
        return out

    def printed(self, table, codec: str) -> dict:
        """Printed aggregate rows: {"class_means": {...}, "averages": {name: value}}."""
        t = self.table(table)
        col = self._column(codec)
        return {"class_means": {c: v[col] for c, v in t["class_means"].items()},
                "averages": {a["name"]: a["bd"][col] for a in t["averages"]}}

    def report(self, table, codec: str, average: Optional[str] = None) -> BDReport:
        """Aggregate the per-sequence cells the way the named (default: last) average row does."""
        t = self.table(table)
        if t["kind"] != "bd-rate":
            raise FixtureError(f"table {table} is not a BD-rate table")
        col = self._column(codec)
        avg = t["averages"][-1] if average is None else next(
            (a for a in t["averages"] if a["name"] == average), None)
        if avg is None:
            raise FixtureError(f"no average row {average!r} in table {table}")
        per_seq = {s["name"]: s["bd"][col] for s in t["sequences"]}
        classes = {s["name"]: s["class"] for s in t["sequences"]}
        return aggregate_report(per_seq, classes, metric=t["metric"], overall_mode=avg["mode"],
                                overall_classes=avg["classes"], label=f"{codec} vs {self.anchor}, {avg['name']}")

    def format(self, table) -> str:
        """Plain-text rendering for terminals."""
        tid = self.table_id(table)
        t = self.table(tid)
        if t["kind"] == "complexity":
            lines = [f"Table {tid}: {t['title']}", f"{'model':<10}{'MACs/px (M)':>14}{'params (M)':>12}{'bits':>6}"]
            for name, row in t["rows"].items():
                lines.append(f"{name:<10}{row['macs_per_pixel_m']:>14.3f}{row['params_m']:>12.2f}"
                             f"{row['weight_bits']:>6}")
            return "\n".join(lines) + "\n"
        head = f"{'class':<6}{'sequence':<22}" + "".join(f"{c:>10}" for c in self.codecs)
        lines = [f"Table {tid}: BD-rate (%) vs {self.anchor}, {t['title']}", head]
        for s in t["sequences"]:
            lines.append(f"{s['class']:<6}{s['name']:<22}" + "".join(f"{v:>10.2f}" for v in s["bd"]))
        for c, v in t["class_means"].items():
            lines.append(f"{'':<6}{'Class ' + c if c != 'UVG' else c:<22}" + "".join(f"{x:>10.2f}" for x in v))
        for a in t["averages"]:
            lines.append(f"{'':<6}{a['name']:<22}" + "".join(f"{x:>10.2f}" for x in a["bd"]))
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=1)
def reference_fixtures() -> ReferenceTables:
    text = resources.files(__package__).joinpath("reference_tables.json").read_text()
    return ReferenceTables(json.loads(text))

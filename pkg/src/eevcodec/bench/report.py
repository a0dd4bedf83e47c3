"""BD-rate report aggregation and serialization (CSV, JSON, SVG).

Class means are arithmetic means of member sequences. The overall figure
is either the mean over all sequences (``overall_mode="sequences"``) or the
mean of the class means (``overall_mode="classes"``), optionally over a
subset of classes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .bdrate import RDCurve

OVERALL_MODES = ("sequences", "classes")
REPORT_COLUMNS = ("metric", "class", "sequence", "bd_rate")
CURVE_COLUMNS = ("codec", "sequence", "bpp", "quality")
FORMATS = ("csv", "json", "svg")


class ReportError(ValueError):
    pass


@dataclass
class BDReport:
    metric: str
    rows: list = field(default_factory=list)          # (class, sequence, bd%) sorted
    class_means: dict = field(default_factory=dict)
    overall: Optional[float] = None
    overall_mode: str = "sequences"
    overall_classes: tuple = ()
    label: str = ""

    def value(self, sequence: str) -> float:
        for _, name, v in self.rows:
            if name == sequence:
                return v
        raise KeyError(sequence)


def _class_key(label: str) -> tuple:
    return (len(label) > 1, label)


def aggregate_report(per_sequence: Mapping[str, float], class_map: Mapping[str, str], metric: str = "",
                     overall_mode: str = "sequences", overall_classes: Optional[Sequence[str]] = None,
                     label: str = "") -> BDReport:
    """Per-class and overall means of per-sequence BD-rates."""
    if overall_mode not in OVERALL_MODES:
        raise ReportError(f"unknown overall mode {overall_mode!r}; expected one of {OVERALL_MODES}")
    missing = sorted(set(per_sequence) - set(class_map))
    if missing:
        raise ReportError(f"no class for sequences: {', '.join(missing)}")
    rows = sorted(((class_map[n], n, float(v)) for n, v in per_sequence.items()),
                  key=lambda r: (_class_key(r[0]), r[1]))
    groups = {}
    for cls, _, v in rows:
        groups.setdefault(cls, []).append(v)
    means = {c: float(np.mean(v)) for c, v in groups.items()}
    chosen = tuple(overall_classes) if overall_classes is not None else tuple(means)
    unknown = [c for c in chosen if c not in means]
    if unknown:
        raise ReportError(f"overall average names classes without sequences: {', '.join(unknown)}")
    overall = None
    if rows:
        if overall_mode == "classes":
            overall = float(np.mean([means[c] for c in chosen]))
        else:
            overall = float(np.mean([v for c, _, v in rows if c in chosen]))
    return BDReport(metric, rows, means, overall, overall_mode, chosen, label)


# -- CSV

def _csv_bytes(header: Sequence[str], rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _csv_rows(data: bytes, expected: Sequence[str]) -> list:
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
    if reader.fieldnames is None or tuple(reader.fieldnames[:len(expected)]) != tuple(expected):
        raise ReportError(f"expected CSV columns {', '.join(expected)}, got {reader.fieldnames}")
    return list(reader)


def parse_report_csv(data: bytes, overall_mode: str = "sequences") -> BDReport:
    rows = _csv_rows(data, REPORT_COLUMNS)
    metrics = {r["metric"] for r in rows}
    if len(metrics) > 1:
        raise ReportError(f"report mixes metrics: {sorted(metrics)}")
    return aggregate_report({r["sequence"]: float(r["bd_rate"]) for r in rows},
                            {r["sequence"]: r["class"] for r in rows},
                            metric=metrics.pop() if metrics else "", overall_mode=overall_mode)


def parse_curves_csv(data: bytes) -> list:
    """Curves from ``codec,sequence,bpp,quality`` rows, in first-seen order."""
    grouped = {}
    for r in _csv_rows(data, CURVE_COLUMNS):
        grouped.setdefault((r["codec"], r["sequence"]), []).append((float(r["bpp"]), float(r["quality"])))
    return [RDCurve(pts, codec, seq) for (codec, seq), pts in grouped.items()]


def _curves_sorted(curves: Sequence[RDCurve]) -> list:
    return sorted(curves, key=lambda c: (c.sequence, c.codec))


# -- JSON

def report_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("report_schema.json").read_text())


def _report_dict(rep: BDReport) -> dict:
    return {
        "kind": "bd-report",
        "metric": rep.metric,
        "label": rep.label,
        "overall_mode": rep.overall_mode,
        "sequences": [{"class": c, "sequence": n, "bd_rate": v} for c, n, v in rep.rows],
        "class_means": [{"class": c, "bd_rate": rep.class_means[c]}
                        for c in sorted(rep.class_means, key=_class_key)],
        "overall": rep.overall,
    }


def _curves_dict(curves: Sequence[RDCurve]) -> dict:
    return {"kind": "rd-curves",
            "curves": [{"codec": c.codec, "sequence": c.sequence, "points": [list(p) for p in c.points]}
                       for c in _curves_sorted(curves)]}


# -- SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
_W, _H, _M = 480, 360, 48


def _svg(body: list, title: str) -> bytes:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">')
    out = [head, f'<title>{escape(title)}</title>',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>'] + body + ["</svg>", ""]
    return "\n".join(out).encode("utf-8")


def _scale(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _axes(xlabel: str, ylabel: str, xr: tuple, yr: tuple) -> list:
    x0, x1, y0, y1 = _M, _W - _M // 2, _H - _M, _M // 2
    return [f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
            f'<text x="{(x0 + x1) // 2}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {(y0 + y1) // 2})">{escape(ylabel)}</text>',
            f'<text x="{x0}" y="{y0 + 14}" text-anchor="middle">{xr[0]:.3g}</text>',
            f'<text x="{x1}" y="{y0 + 14}" text-anchor="middle">{xr[1]:.3g}</text>',
            f'<text x="{x0 - 4}" y="{y0}" text-anchor="end">{yr[0]:.4g}</text>',
            f'<text x="{x0 - 4}" y="{y1 + 4}" text-anchor="end">{yr[1]:.4g}</text>']


def _curves_svg(curves: Sequence[RDCurve], ylabel: str = "quality") -> bytes:
    curves = _curves_sorted(curves)
    pts = [p for c in curves for p in c.points] or [(0.0, 0.0)]
    xr = (min(p[0] for p in pts), max(p[0] for p in pts))
    yr = (min(p[1] for p in pts), max(p[1] for p in pts))
    sx, sy = _scale(*xr, _M, _W - _M // 2), _scale(*yr, _H - _M, _M // 2)
    body = _axes("bpp", ylabel, xr, yr)
    for i, c in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(r):.2f},{sy(q):.2f}" for r, q in c.points)
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                    f'<title>{escape(c.label)}</title></polyline>')
        body += [f'<circle cx="{sx(r):.2f}" cy="{sy(q):.2f}" r="3" fill="{color}"/>' for r, q in c.points]
        body.append(f'<text x="{_W - _M // 2 - 4}" y="{_H - _M - 8 - 14 * i}" text-anchor="end" '
                    f'fill="{color}">{escape(c.label)}</text>')
    return _svg(body, "rate-distortion curves")


def _report_svg(rep: BDReport) -> bytes:
    vals = [v for _, _, v in rep.rows] or [0.0]
    lo, hi = min(min(vals), 0.0), max(max(vals), 0.0)
    sx = _scale(lo, hi, _M + 80, _W - _M // 2)
    step = (_H - 2 * _M) / max(1, len(rep.rows))
    body = [f'<line x1="{sx(0):.2f}" y1="{_M // 2}" x2="{sx(0):.2f}" y2="{_H - _M}" stroke="black"/>',
            f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle">BD-rate (%)</text>']
    for i, (cls, name, v) in enumerate(rep.rows):
        y = _M // 2 + i * step
        x, w = (sx(v), sx(0) - sx(v)) if v < 0 else (sx(0), sx(v) - sx(0))
        color = _PALETTE[0] if v < 0 else _PALETTE[1]
        body.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{step * 0.8:.2f}" fill="{color}">'
                    f'<title>{escape(cls)} {escape(name)}: {v:.2f}%</title></rect>')
        body.append(f'<text x="{_M + 76}" y="{y + step * 0.6:.2f}" text-anchor="end">{escape(name)}</text>')
    return _svg(body, f"BD-rate {rep.label}".strip())


# -- dispatch

def emit_report(obj, fmt: str) -> bytes:
    """Serialize a BDReport or a list of RDCurves as ``csv``, ``json`` or ``svg``."""
    if fmt not in FORMATS:
        raise ReportError(f"unknown report format {fmt!r}; expected one of {', '.join(FORMATS)}")
    if isinstance(obj, BDReport):
        if fmt == "csv":
            return _csv_bytes(REPORT_COLUMNS, [(obj.metric, c, n, repr(v)) for c, n, v in obj.rows])
        if fmt == "json":
            return (json.dumps(_report_dict(obj), indent=2) + "\n").encode("utf-8")
        return _report_svg(obj)
    curves = list(obj)
    if not all(isinstance(c, RDCurve) for c in curves):
        raise ReportError("emit_report takes a BDReport or a sequence of RDCurve")
    if fmt == "csv":
        return _csv_bytes(CURVE_COLUMNS, [(c.codec, c.sequence, repr(r), repr(q))
                                          for c in _curves_sorted(curves) for r, q in c.points])
    if fmt == "json":
        return (json.dumps(_curves_dict(curves), indent=2) + "\n").encode("utf-8")
    return _curves_svg(curves)

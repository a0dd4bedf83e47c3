"""Bjontegaard delta rate between two rate-distortion curves.

log10(rate) is fitted as a function of quality (cubic polynomial by
default, PCHIP optionally); the mean gap between the fits over the shared
quality interval gives ``100 * (10**mean - 1)`` percent. Negative values
mean the test codec needs fewer bits at equal quality.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

METHODS = ("cubic", "pchip")
PCHIP_REPORT_GAP = 0.5


class BDRateError(ValueError):
    pass


@dataclass
class RDCurve:
    points: list = field(default_factory=list)      # (bpp, quality) pairs
    codec: str = ""
    sequence: str = ""

    def __post_init__(self):
        pts = sorted((float(r), float(q)) for r, q in self.points)
        rates = [r for r, _ in pts]
        if any(r <= 0 or not np.isfinite(r) for r in rates):
            raise BDRateError(f"{self.label}: rates must be positive and finite")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise BDRateError(f"{self.label}: rates must be distinct")
        quals = [q for _, q in pts]
        if any(b < a for a, b in zip(quals, quals[1:])):
            warnings.warn(f"{self.label}: quality decreases as rate increases", RuntimeWarning, stacklevel=2)
        self.points = pts

    @property
    def label(self) -> str:
        return "/".join(p for p in (self.codec, self.sequence) if p) or "curve"

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for r, _ in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([q for _, q in self.points])


def _curve(c) -> RDCurve:
    return c if isinstance(c, RDCurve) else RDCurve(list(c))


def _integral(log_rate: np.ndarray, quality: np.ndarray, lo: float, hi: float, method: str) -> float:
    if method == "cubic":
        poly = np.polyint(np.polyfit(quality, log_rate, 3))
        return float(np.polyval(poly, hi) - np.polyval(poly, lo))
    order = np.argsort(quality)
    q, lr = quality[order], log_rate[order]
    if np.any(np.diff(q) <= 0):
        raise BDRateError("PCHIP needs strictly increasing quality values")
    return float(PchipInterpolator(q, lr).integrate(lo, hi))


def bd_rate(anchor, test, method: str = "cubic") -> float:
    """Average rate difference of ``test`` against ``anchor`` in percent."""
    if method not in METHODS:
        raise BDRateError(f"unknown BD-rate method {method!r}")
    a, t = _curve(anchor), _curve(test)
    for c in (a, t):
        if len(c.points) < 4:
            raise BDRateError(f"{c.label}: BD-rate needs at least 4 points, got {len(c.points)}")
    qa, qt = a.qualities, t.qualities
    lo, hi = max(qa.min(), qt.min()), min(qa.max(), qt.max())
    if not hi > lo:
        raise BDRateError(f"quality ranges do not overlap: [{qa.min():g}, {qa.max():g}] "
                          f"vs [{qt.min():g}, {qt.max():g}]")
    ia = _integral(np.log10(a.rates), qa, lo, hi, method)
    it = _integral(np.log10(t.rates), qt, lo, hi, method)
    return float(100.0 * (10.0 ** ((it - ia) / (hi - lo)) - 1.0))


def bd_rate_both(anchor, test) -> dict:
    """Cubic result, plus the PCHIP result when the two differ by more than 0.5 points."""
    out = {"cubic": bd_rate(anchor, test, "cubic")}
    try:
        p = bd_rate(anchor, test, "pchip")
    except BDRateError:
        return out
    if abs(p - out["cubic"]) > PCHIP_REPORT_GAP:
        out["pchip"] = p
    return out


def curves_from_rows(rows: Sequence[dict], codec: str = "") -> dict:
    """Group rows with ``sequence``, ``bpp`` and ``quality`` keys (``codec`` optional) by sequence."""
    points, codecs = {}, {}
    for row in rows:
        name = row["sequence"]
        points.setdefault(name, []).append((float(row["bpp"]), float(row["quality"])))
        codecs.setdefault(name, row.get("codec") or codec)
    return {name: RDCurve(pts, codecs[name], name) for name, pts in points.items()}

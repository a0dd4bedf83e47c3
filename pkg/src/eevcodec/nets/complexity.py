"""Parameter and MACs-per-pixel accounting over conv/deconv layer tables.

params      = sum(k*k*cin*cout + cout)
MACs/pixel  = sum(k*k*cin*cout * out_h*out_w) / (height*width)
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Union

from ..tensor.nn import LayerRecord, Module

KNOWN_KINDS = ("conv", "deconv")

# Published per-version figures: (MACs per pixel in millions, parameters in millions).
REFERENCE_ROWS = OrderedDict([
    ("EEV-0.1", (0.678, 5.26)),
    ("EEV-0.3", (2.021, 7.17)),
    ("EEV-0.4", (3.127, 23.96)),
])


class UnknownLayerKind(ValueError):
    pass


@dataclass
class ComplexityReport:
    height: int
    width: int
    params: int
    macs_per_pixel: float
    breakdown: "OrderedDict[str, tuple]" = field(default_factory=OrderedDict)
    reference: "OrderedDict[str, tuple]" = field(default_factory=lambda: OrderedDict(REFERENCE_ROWS))

    def rows(self) -> list:
        """(submodule, params, MACs/pixel) rows followed by the total."""
        out = [(name, p, m) for name, (p, m) in self.breakdown.items()]
        out.append(("total", self.params, self.macs_per_pixel))
        return out

    def format(self, label: str = "model") -> str:
        lines = [f"{label} at {self.width}x{self.height}",
                 f"{'submodule':<24}{'params':>14}{'MACs/pixel':>16}"]
        for name, p, m in self.rows():
            lines.append(f"{name:<24}{p:>14,d}{m:>16,.1f}")
        lines.append("reference (M MACs/pixel, M params):")
        for name, (m, p) in self.reference.items():
            lines.append(f"  {name:<10}{m:>8.3f}{p:>8.2f}")
        return "\n".join(lines)


LayerSource = Union[Module, Iterable[LayerRecord], "OrderedDict[str, object]"]


def _records(arch, height: int, width: int) -> "OrderedDict[str, list]":
    """Normalize to submodule name -> list of records."""
    if hasattr(arch, "submodules"):
        arch = arch.submodules()
    if isinstance(arch, Module):
        return OrderedDict([("model", arch.layer_table(height, width))])
    if isinstance(arch, dict):
        out = OrderedDict()
        for name, sub in arch.items():
            out[name] = sub.layer_table(height, width) if isinstance(sub, Module) else list(sub)
        return out
    return OrderedDict([("model", list(arch))])


def count_complexity(arch: LayerSource, height: int, width: int) -> ComplexityReport:
    """Account every conv/deconv of ``arch`` for a ``height`` x ``width`` input.

    ``arch`` may be a Module, a sequence of LayerRecords, a mapping of
    submodule names to either, or an object exposing ``submodules()``.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"resolution must be positive, got {width}x{height}")
    breakdown = OrderedDict()
    total_params, total_macs = 0, 0
    for name, records in _records(arch, height, width).items():
        p = m = 0
        for rec in records:
            if rec.kind not in KNOWN_KINDS:
                raise UnknownLayerKind(f"layer {rec.name!r} has unknown kind {rec.kind!r}")
            p += rec.params
            m += rec.macs
        breakdown[name] = (p, m / (height * width))
        total_params += p
        total_macs += m
    return ComplexityReport(height, width, total_params, total_macs / (height * width), breakdown)

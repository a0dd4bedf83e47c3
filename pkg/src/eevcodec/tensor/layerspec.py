"""Compact layer notation: ``k7c32s1`` (conv) and ``dk3c64s2`` (deconv)."""

from __future__ import annotations

from dataclasses import dataclass

VALID_KERNELS = (1, 3, 5, 7)
VALID_STRIDES = (1, 2)


class LayerSpecError(ValueError):
    def __init__(self, text: str, position: int, message: str):
        self.text = text
        self.position = position
        token = text[position] if position < len(text) else "<end>"
        self.token = token
        super().__init__(f"{message} at '{token}' (position {position}) in {text!r}")


@dataclass(frozen=True)
class LayerSpec:
    kernel: int
    channels: int
    stride: int
    op_kind: str = "conv"

    def __post_init__(self):
        if self.kernel not in VALID_KERNELS:
            raise ValueError(f"kernel must be one of {VALID_KERNELS}, got {self.kernel}")
        if self.stride not in VALID_STRIDES:
            raise ValueError(f"stride must be one of {VALID_STRIDES}, got {self.stride}")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.op_kind not in ("conv", "deconv"):
            raise ValueError(f"unknown op kind {self.op_kind!r}")

    def format(self) -> str:
        prefix = "d" if self.op_kind == "deconv" else ""
        return f"{prefix}k{self.kernel}c{self.channels}s{self.stride}"

    __str__ = format


def _read_int(text: str, pos: int) -> tuple[int, int]:
    start = pos
    while pos < len(text) and text[pos].isdigit():
        pos += 1
    if pos == start:
        raise LayerSpecError(text, pos, "expected digits")
    return int(text[start:pos]), pos


def parse_layer_spec(text: str) -> LayerSpec:
    pos = 0
    kind = "conv"
    if text.startswith("d"):
        kind = "deconv"
        pos = 1
    values = {}
    for key in "kcs":
        if pos >= len(text) or text[pos] != key:
            raise LayerSpecError(text, pos, f"expected '{key}'")
        values[key], pos = _read_int(text, pos + 1)
    if pos != len(text):
        raise LayerSpecError(text, pos, "unexpected trailing input")
    try:
        return LayerSpec(values["k"], values["c"], values["s"], kind)
    except ValueError as exc:
        raise LayerSpecError(text, 0, str(exc)) from None


def canonical(text: str) -> str:
    """Canonical spelling of a valid spec (drops leading zeros)."""
    return parse_layer_spec(text).format()

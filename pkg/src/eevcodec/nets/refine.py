"""Residual refinement networks: RAB-based prediction refinement, in-loop
restoration, and the motion-compensation net of the early models.

Every network here ends in a zero-initialized conv and adds its input back,
so an untrained network is an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import ShapeError, Tensor, ops
from ..tensor.nn import Conv2d, LayerRecord, Module, conv_stack_table


GATE_LOGIT_LIMIT = 16.0


class RAB(Module):
    """Residual block with squeeze-and-excite channel attention.

    out = x + conv2(relu(conv1(x))) * gate, gate = sigmoid(up(relu(down(gap(.)))))
    """

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        squeeze = max(channels // ratio, 1)
        self.conv1 = Conv2d(channels, f"k3c{channels}s1", rng)
        self.conv2 = Conv2d(channels, f"k3c{channels}s1", rng, gain=0.1)
        self.down = Conv2d(channels, f"k1c{squeeze}s1", rng)
        self.up = Conv2d(squeeze, f"k1c{channels}s1", rng)

    def gate(self, body: Tensor) -> Tensor:
        s = ops.relu(self.down(ops.global_avg_pool(body)))
        # float32 sigmoid rounds to exactly 0 or 1 past |16|
        return ops.sigmoid(ops.clip(self.up(s), -GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT))

    def __call__(self, x: Tensor) -> Tensor:
        body = self.conv2(ops.relu(self.conv1(x)))
        return ops.add(x, ops.mul(body, self.gate(body)))

    def layer_table(self, height, width, prefix=""):
        recs = self.conv1.layer_table(height, width, f"{prefix}conv1")
        recs += self.conv2.layer_table(height, width, f"{prefix}conv2")
        recs += self.down.layer_table(1, 1, f"{prefix}down")
        recs += self.up.layer_table(1, 1, f"{prefix}up")
        return recs


@dataclass(frozen=True)
class RefineArch:
    channels: int = 64
    blocks: int = 5
    ratio: int = 16
    in_channels: int = 3
    extra_inputs: int = 0


class RefineNet(Module):
    """head conv, RAB chain, zero-initialized tail conv, global input skip."""

    def __init__(self, arch: RefineArch = RefineArch(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.arch = arch
        c = arch.channels
        self.head = Conv2d(arch.in_channels + arch.extra_inputs, f"k3c{c}s1", rng)
        self.blocks = [RAB(c, arch.ratio, rng) for _ in range(arch.blocks)]
        self.tail = Conv2d(c, f"k3c{arch.in_channels}s1", rng, init="zero")

    def __call__(self, x: Tensor, extra: Tensor = None) -> Tensor:
        if x.shape[1] != self.arch.in_channels:
            raise ShapeError(f"refine net expects {self.arch.in_channels} channels, got {x.shape[1]}")
        inp = x if extra is None else ops.concat([x, extra], axis=1)
        if inp.shape[1] != self.arch.in_channels + self.arch.extra_inputs:
            raise ShapeError("refine net extra input does not match its configuration")
        t = self.head(inp)
        for block in self.blocks:
            t = block(t)
        return ops.add(x, self.tail(t))

    def layer_table(self, height, width, prefix=""):
        recs = self.head.layer_table(height, width, f"{prefix}head")
        for i, b in enumerate(self.blocks):
            recs += b.layer_table(height, width, f"{prefix}rab{i}.")
        return recs + self.tail.layer_table(height, width, f"{prefix}tail")


def mcp_refine(prediction: Tensor, net: RefineNet) -> Tensor:
    return net(prediction)


ILR_SPECS = ("k5c32s1", "k3c32s1", "k3c32s1", "k3c32s1", "k5c3s1")


class ConvResidualNet(Module):
    """Plain conv stack with leaky ReLU between layers and a global skip on
    the first ``skip_channels`` input channels."""

    def __init__(self, in_channels: int, specs, seed: int = 0, slope: float = 0.1,
                 skip_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.slope = slope
        self.skip_channels = skip_channels
        self.in_channels = in_channels
        self.convs = []
        c = in_channels
        for i, spec in enumerate(specs):
            last = i == len(specs) - 1
            conv = Conv2d(c, spec, rng, init="zero" if last else "he")
            self.convs.append(conv)
            c = conv.spec.channels
        if c != skip_channels:
            raise ValueError("last layer must emit the skip channel count")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        t = x
        for i, conv in enumerate(self.convs):
            t = conv(t)
            if i < len(self.convs) - 1:
                t = ops.leaky_relu(t, self.slope)
        skip = x if self.in_channels == self.skip_channels else ops.slice_channels(x, 0, self.skip_channels)
        return ops.add(skip, t)

    def layer_table(self, height, width, prefix=""):
        return conv_stack_table(self.convs, height, width, prefix)


class ILRNet(ConvResidualNet):
    def __init__(self, specs=ILR_SPECS, seed: int = 0):
        super().__init__(3, specs, seed)


def ilr_filter(recon: Tensor, net: ILRNet) -> Tensor:
    return net(recon)


MC_SPECS = ("k3c32s1", "k3c32s1", "k3c3s1")


class MCNet(ConvResidualNet):
    """Refines a warped frame from (warped, reference, flow), 8 input channels."""

    def __init__(self, specs=MC_SPECS, seed: int = 0):
        super().__init__(8, specs, seed)

    def compensate(self, warped: Tensor, ref: Tensor, flow: Tensor) -> Tensor:
        return self(ops.concat([warped, ref, flow], axis=1))


def total_records(records) -> tuple:
    params = sum(r.params for r in records)
    macs = sum(r.macs for r in records)
    return params, macs


__all__ = ["RAB", "RefineArch", "RefineNet", "ILRNet", "MCNet", "ConvResidualNet", "mcp_refine",
           "ilr_filter", "LayerRecord", "total_records"]

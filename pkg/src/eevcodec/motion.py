"""Coarse-to-fine optical flow (ME-Net) over a 5-level average-pooling pyramid.

Each level ``i`` refines the upsampled flow from level ``i + 1``::

    F_i = up(F_{i+1}) + G_i(concat(warp(Ref_i, up(F_{i+1})), L_i, up(F_{i+1})))

with ``F_5`` taken as zero, so a network whose final layers are zero returns
the zero field at every level. Flows are (dx, dy) in pixels of their own level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import GradTape, NonFiniteError, ShapeError, Tensor, ops
from .tensor.nn import Adam, Conv2d, Module, conv_stack_table

log = logging.getLogger(__name__)

PYRAMID_LEVELS = 5
FULL_LEVEL_SPECS = ("k7c32s1", "k7c64s1", "k7c32s1", "k7c16s1", "k7c2s1")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the last finite state."""

    def __init__(self, message: str, step: int, losses: list, state: Optional[dict] = None):
        super().__init__(message)
        self.step = step
        self.losses = losses
        self.state = state


@dataclass(frozen=True)
class MENetConfig:
    level_specs: tuple = FULL_LEVEL_SPECS
    levels: int = PYRAMID_LEVELS
    share_weights: bool = False
    upsample: str = "nearest"
    slope: float = 0.1
    zero_final: bool = True

    @classmethod
    def small(cls) -> "MENetConfig":
        """Narrow stack for desk-scale training and closed-loop tests."""
        return cls(level_specs=("k3c16s1", "k3c16s1", "k3c2s1"))

    def __post_init__(self):
        if self.upsample not in ("nearest", "bilinear"):
            raise ValueError(f"unknown flow upsampling {self.upsample!r}")
        if not self.level_specs or not self.level_specs[-1].startswith("k") or "c2s1" not in self.level_specs[-1]:
            raise ValueError("the last level spec must emit 2 channels at stride 1")


def build_pyramid(frame: Tensor, levels: int = PYRAMID_LEVELS) -> list:
    """Level 0 is the input; each further level is a 2x2 mean pool of the previous."""
    h, w = frame.shape[2:]
    div = 2 ** (levels - 1)
    if h % div or w % div:
        raise ShapeError(f"pyramid of {levels} levels needs dims divisible by {div}, got {h}x{w}")
    pyr = [frame]
    for _ in range(levels - 1):
        pyr.append(ops.avg_pool2(pyr[-1]))
    return pyr


def upsample_flow(flow: Tensor, mode: str = "nearest") -> Tensor:
    """Double resolution and displacement magnitude."""
    up = ops.upsample_nearest2(flow) if mode == "nearest" else ops.upsample_bilinear2(flow)
    return ops.mul(up, 2.0)


class LevelNet(Module):
    def __init__(self, cin: int, specs: Sequence[str], rng: np.random.Generator, slope: float,
                 zero_final: bool):
        self.slope = slope
        self.convs = []
        c = cin
        for i, spec in enumerate(specs):
            last = i == len(specs) - 1
            conv = Conv2d(c, spec, rng, init="zero" if (last and zero_final) else "he")
            self.convs.append(conv)
            c = conv.spec.channels

    def __call__(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = ops.leaky_relu(x, self.slope)
        return x

    def layer_table(self, height, width, prefix=""):
        return conv_stack_table(self.convs, height, width, f"{prefix}conv.")


class MENet(Module):
    """Per-level refinement stacks G_0 .. G_4 (index 0 is full resolution)."""

    def __init__(self, config: MENetConfig = MENetConfig(), seed: int = 0, channels: int = 3):
        self.config = config
        rng = np.random.default_rng(seed)
        cin = 2 * channels + 2
        n_nets = 1 if config.share_weights else config.levels
        self.nets = [LevelNet(cin, config.level_specs, rng, config.slope, config.zero_final)
                     for _ in range(n_nets)]

    def level_net(self, i: int) -> LevelNet:
        return self.nets[0 if self.config.share_weights else i]

    def flows(self, ref_pyr: Sequence[Tensor], cur_pyr: Sequence[Tensor]) -> list:
        """Flow at every level, index 0 full resolution."""
        levels = self.config.levels
        if len(ref_pyr) != levels or len(cur_pyr) != levels:
            raise ShapeError(f"expected {levels} pyramid levels")
        out = [None] * levels
        prev = None
        for i in reversed(range(levels)):
            ref_i, cur_i = ref_pyr[i], cur_pyr[i]
            if ref_i.shape != cur_i.shape:
                raise ShapeError(f"level {i}: ref {ref_i.shape} vs cur {cur_i.shape}")
            n, _, h, w = ref_i.shape
            if prev is None:
                init = Tensor(np.zeros((n, 2, h, w), dtype=ref_i.dtype))
                warped = ref_i
            else:
                init = upsample_flow(prev, self.config.upsample)
                warped = ops.bilinear_warp(ref_i, init)
            delta = self.level_net(i)(ops.concat([warped, cur_i, init], axis=1))
            prev = ops.add(init, delta)
            out[i] = prev
        return out

    def __call__(self, ref: Tensor, cur: Tensor) -> Tensor:
        return estimate_flow(ref, cur, self)

    def layer_table(self, height, width, prefix=""):
        records = []
        for i in range(self.config.levels):
            s = 2 ** i
            records += self.level_net(i).layer_table(height // s, width // s, f"{prefix}level{i}.")
        return records


def estimate_flow(ref: Tensor, cur: Tensor, net: MENet) -> Tensor:
    """Full-resolution flow from ``ref`` (decoded previous frame) to ``cur``."""
    if ref.shape != cur.shape:
        raise ShapeError(f"ref {ref.shape} and cur {cur.shape} differ")
    levels = net.config.levels
    return net.flows(build_pyramid(ref, levels), build_pyramid(cur, levels))[0]


def pyramid_loss(ref_pyr: Sequence[Tensor], cur_pyr: Sequence[Tensor], flows: Sequence[Tensor]) -> Tensor:
    """Sum over levels of the per-level mean squared warping error."""
    if not (len(ref_pyr) == len(cur_pyr) == len(flows)):
        raise ShapeError(f"level count mismatch: {len(ref_pyr)}, {len(cur_pyr)}, {len(flows)}")
    total = None
    for ref_i, cur_i, f in zip(ref_pyr, cur_pyr, flows):
        if f.shape[2:] != ref_i.shape[2:] or f.shape[1] != 2:
            raise ShapeError(f"flow {f.shape} does not annotate level of shape {ref_i.shape}")
        err = ops.mean(ops.square(ops.sub(ops.bilinear_warp(ref_i, f), cur_i)))
        total = err if total is None else ops.add(total, err)
    return total


@dataclass
class PretrainResult:
    net: MENet
    initial_loss: float
    final_loss: float
    losses: list = field(default_factory=list)


def _stack_pairs(frame_pairs) -> tuple:
    refs = np.concatenate([np.asarray(r.data if isinstance(r, Tensor) else r, np.float32) for r, _ in frame_pairs])
    curs = np.concatenate([np.asarray(c.data if isinstance(c, Tensor) else c, np.float32) for _, c in frame_pairs])
    return Tensor(refs), Tensor(curs)


def pretrain_menet(frame_pairs, steps: int, learning_rate: float, net: Optional[MENet] = None,
                   config: MENetConfig = MENetConfig(), seed: int = 0) -> PretrainResult:
    """Full-batch Adam on the pyramid loss over (ref, cur) pairs.

    ``losses[k]`` is the loss before update ``k``; the final entry is the
    loss after the last update, so ``len(losses) == steps + 1``.
    """
    net = net if net is not None else MENet(config, seed=seed)
    ref, cur = _stack_pairs(frame_pairs)
    levels = net.config.levels
    ref_pyr = build_pyramid(ref, levels)
    cur_pyr = build_pyramid(cur, levels)
    opt = Adam(net.parameters(), lr=learning_rate)
    losses = []
    last_state = net.state_dict()
    for step in range(steps + 1):
        try:
            if step == steps:
                loss = pyramid_loss(ref_pyr, cur_pyr, net.flows(ref_pyr, cur_pyr))
            else:
                with GradTape() as tape:
                    loss = pyramid_loss(ref_pyr, cur_pyr, net.flows(ref_pyr, cur_pyr))
            value = float(loss.item())
        except NonFiniteError:
            value = math.nan
        if not math.isfinite(value):
            net.load_state_dict(last_state)
            raise DivergenceError(f"pyramid loss became non-finite at step {step}", step, losses, last_state)
        losses.append(value)
        if step == steps:
            break
        last_state = net.state_dict()
        opt.zero_grad()
        try:
            tape.backward(loss)
            opt.step()
        except NonFiniteError as exc:
            net.load_state_dict(last_state)
            raise DivergenceError(str(exc), step, losses, last_state) from exc
        if step % 50 == 0:
            log.debug("menet step %d loss %.6g", step, value)
    return PretrainResult(net, losses[0], losses[-1], losses)


def synthetic_texture(rng: np.random.Generator, height: int, width: int, channels: int = 3,
                      smooth: int = 8) -> np.ndarray:
    """Smooth random RGB pattern in [0, 1], (C, H, W)."""
    img = rng.uniform(0.0, 1.0, size=(channels, height + 16, width + 16))
    for _ in range(smooth):
        img = (img + np.roll(img, 1, 1) + np.roll(img, -1, 1)) / 3.0
        img = (img + np.roll(img, 1, 2) + np.roll(img, -1, 2)) / 3.0
    img = img[:, 8:8 + height, 8:8 + width]
    lo, hi = img.min(), img.max()
    return ((img - lo) / max(hi - lo, 1e-6)).astype(np.float32)


def translation_pairs(count: int, size: int = 64, max_shift: int = 3, seed: int = 0) -> list:
    """(ref, cur) pairs where ``cur(p) = ref(p + d)`` for an integer shift ``d`` per pair."""
    rng = np.random.default_rng(seed)
    pairs = []
    pad = max_shift + 1
    for _ in range(count):
        big = synthetic_texture(rng, size + 2 * pad, size + 2 * pad)
        dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
        ref = big[:, pad:pad + size, pad:pad + size]
        cur = big[:, pad + dy:pad + dy + size, pad + dx:pad + dx + size]
        pairs.append((ref[None].copy(), cur[None].copy()))
    return pairs

"""Toy-scale end-to-end training of a P-frame model.

Every (previous frame, frame) pair of a short clip forms one batch item;
the reference is the previous original frame. The objective per step is::

    lam * D + R + w_pred * L_pred + w_pyr * L_pyr

with D the MSE of the final reconstruction, R the estimated bits per pixel
of every coded latent, L_pred the MSE of the motion-compensated prediction
and L_pyr the ME-Net pyramid warping loss (absent for EEV-0.4).
Quantization noise is drawn from the same seed at every step, so the
objective is a fixed function of the weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..motion import DivergenceError, build_pyramid, pyramid_loss, synthetic_texture
from ..recurrent import motion_difference, predict_motion, progressive_predict, spatiotemporal_refine
from ..tensor import GradTape, NonFiniteError, Tensor, ops
from ..tensor.nn import Adam
from .codec import CodecModel, rd_loss
from .config import ModelConfig

log = logging.getLogger(__name__)

PRED_WEIGHT = 0.1
PYRAMID_WEIGHT = 0.1


@dataclass
class TrainResult:
    model: CodecModel
    losses: list = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def translating_clip(frames: int = 5, size: int = 64, step: tuple = (1, 2), seed: int = 0) -> np.ndarray:
    """(frames, 3, size, size) 8-bit-valued texture moving ``step`` = (dx, dy) pixels per frame."""
    dx, dy = step
    pad = (frames - 1) * max(abs(dx), abs(dy)) + 1
    big = synthetic_texture(np.random.default_rng(seed), size + 2 * pad, size + 2 * pad)
    clip = np.stack([big[:, pad + t * dy:pad + t * dy + size, pad + t * dx:pad + t * dx + size]
                     for t in range(frames)])
    return (np.floor(clip * 255.0 + 0.5) / 255.0).astype(np.float32)


def _mse(a: Tensor, b: Tensor) -> Tensor:
    return ops.mean(ops.square(ops.sub(a, b)))


def training_loss(ref: Tensor, cur: Tensor, model: CodecModel, rng: np.random.Generator,
                  pred_weight: float = PRED_WEIGHT, pyramid_weight: float = PYRAMID_WEIGHT) -> tuple:
    """(total loss, parts dict of floats) for a batch of (ref, cur) pairs."""
    cfg = model.config
    n, _, h, w = cur.shape
    rate_terms = []
    l_pyr = None
    if cfg.motion_decouple:
        rec = model.recurrent
        feats, skips = rec.extractor(ref)
        state = rec.initial_state(ref.shape)
        _, f1, state = predict_motion([feats], state, rec)
        m_c, mv_bits, _, _ = motion_difference(ref, cur, f1, rec, state, mode="train", rng=rng)
        _, x_bar = progressive_predict(f1, m_c, skips, rec)
        pred = spatiotemporal_refine(x_bar, rec)
    else:
        levels = model.menet.config.levels
        ref_pyr, cur_pyr = build_pyramid(ref, levels), build_pyramid(cur, levels)
        flows = model.menet.flows(ref_pyr, cur_pyr)
        l_pyr = pyramid_loss(ref_pyr, cur_pyr, flows)
        flow_hat, mv_bits = model.mv_codec.forward_train(flows[0], rng)
        pred = model.mcnet.compensate(ops.bilinear_warp(ref, flow_hat), ref, flow_hat)
        if cfg.mcp_refine:
            pred = model.refine(pred)
    rate_terms.append(mv_bits)
    r_hat, r_bits = model.res_codec.forward_train(ops.sub(cur, pred), rng)
    rate_terms.append(r_bits)
    x_tilde = ops.add(pred, r_hat)
    if cfg.c2f:
        r2_hat, r2_bits = model.c2f_codec.forward_train(ops.sub(cur, x_tilde), rng)
        rate_terms.append(r2_bits)
        x_tilde = ops.add(x_tilde, r2_hat)
    x_hat = model.ilr(x_tilde) if cfg.ilr_network else x_tilde
    bits = rate_terms[0]
    for b in rate_terms[1:]:
        bits = ops.add(bits, b)
    bpp = ops.mul(bits, 1.0 / (n * h * w))
    dist = _mse(x_hat, cur)
    l_pred = _mse(pred, cur)
    total = ops.add(rd_loss(dist, bpp, cfg.lam), ops.mul(l_pred, pred_weight))
    if l_pyr is not None:
        total = ops.add(total, ops.mul(l_pyr, pyramid_weight))
    parts = {"distortion": float(dist.item()), "bpp": float(bpp.item()), "pred": float(l_pred.item()),
             "pyramid": float(l_pyr.item()) if l_pyr is not None else 0.0}
    return total, parts


def train_toy(frames, config: ModelConfig, steps: int, learning_rate: float,
              model: Optional[CodecModel] = None, seed: int = 0,
              pred_weight: float = PRED_WEIGHT, pyramid_weight: float = PYRAMID_WEIGHT) -> TrainResult:
    """Full-batch Adam on every consecutive pair of ``frames`` (T, 3, H, W).

    ``losses`` has ``steps + 1`` entries: the loss before each update and
    after the last one. A non-finite loss restores the last finite weights
    and raises ``DivergenceError``.
    """
    clip = np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float32)
    if clip.ndim != 4 or clip.shape[0] < 2:
        raise ValueError(f"need at least two (3, H, W) frames, got array of shape {clip.shape}")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    model = model if model is not None else CodecModel(config, seed=seed)
    ref, cur = Tensor(clip[:-1]), Tensor(clip[1:])
    params = model.parameters()
    opt = Adam(params, lr=learning_rate)
    losses = []
    last_state = model.state_dict()
    for step in range(steps + 1):
        rng = np.random.default_rng(seed)
        tape = None
        try:
            if step == steps:
                loss, _ = training_loss(ref, cur, model, rng, pred_weight, pyramid_weight)
            else:
                with GradTape() as tape:
                    loss, _ = training_loss(ref, cur, model, rng, pred_weight, pyramid_weight)
            value = float(loss.item())
        except NonFiniteError:
            value = math.nan
        if not math.isfinite(value):
            model.load_state_dict(last_state)
            raise DivergenceError(f"training loss became non-finite at step {step}", step, losses, last_state)
        losses.append(value)
        if step == steps:
            break
        last_state = model.state_dict()
        opt.zero_grad()
        try:
            tape.backward(loss)
            opt.step()
        except NonFiniteError as exc:
            model.load_state_dict(last_state)
            raise DivergenceError(str(exc), step, losses, last_state) from exc
        if step % 25 == 0:
            log.info("train step %d loss %.6g", step, value)
    return TrainResult(model, losses)

"""Frame and sequence encode/decode loops.

P frames (EEV-0.1 to 0.3)::

    F      = estimate_flow(x_ref, x)             encoder only
    F_hat  = mv_codec(F)                         payload "mv"
    x_bar  = mc_net(warp(x_ref, F_hat), x_ref, F_hat)
    p      = mcp_refine(x_bar)                   0.2 and later
    r_hat  = residual_codec(x - p)               payload "residual"
    r2_hat = residual_codec(x - (p + r_hat))     payload "c2f", 0.3
    x_tld  = p + r_hat + r2_hat
    x_hat  = ilr(x_tld)                          0.3 and later

EEV-0.4 replaces the first three lines with the feature-space recurrent
motion path (payload "mv" carries the motion difference).

The prediction and residual reconstructions are snapped to a 2^-40 grid and
summed in float64, so the sum above is exact and decodes bit-identically.
"""

from __future__ import annotations

from collections import Counter, OrderedDict, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..bench.metrics import ms_ssim, ms_ssim_scales, psnr_rgb, to_hwc
from ..entropy.container import (
    FRAME_I,
    FRAME_P,
    PAYLOAD_C2F,
    PAYLOAD_INTRA,
    PAYLOAD_MV,
    PAYLOAD_RESIDUAL,
    ContainerError,
    FrameChunk,
    Payload,
    StreamHeader,
    VersionError,
    container_overhead_bytes,
    read_container,
    write_container,
)
from ..motion import MENet, estimate_flow
from ..nets.autoencoder import HyperpriorAutoencoder
from ..nets.refine import ILRNet, MCNet, RefineNet
from ..recurrent import (
    RecurrentMotion,
    decode_motion_difference,
    motion_difference,
    predict_motion,
    progressive_predict,
    spatiotemporal_refine,
)
from ..tensor import ShapeError, Tensor, ops
from ..tensor.nn import Module
from .config import ARCH_IDS, METRICS, ModelConfig, arch_by_id, version_from_id
from .intra import VerbatimIntra, backend_for_id

GRID = 2.0 ** -40
FEATURE_DPB = 4

# Invocation counters per coding tool, for version-gating checks.
TOOL_CALLS: Counter = Counter()


class VersionMismatchError(VersionError):
    pass


class DPBError(RuntimeError):
    pass


def rd_loss(distortion, bits, lam):
    """lam * D + R; works on floats and on Tensors."""
    if isinstance(distortion, Tensor) or isinstance(bits, Tensor):
        return ops.add(ops.mul(distortion, float(lam)), bits)
    return lam * distortion + bits


def _snap(a: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64) / GRID) * GRID


class CodecModel(Module):
    """Every network a model version uses, with seeded initialization."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        arch = config.arch
        if config.motion_decouple:
            self.recurrent = RecurrentMotion(arch.recurrent, seed=seed + 1)
        else:
            self.menet = MENet(arch.menet, seed=seed + 2)
            self.mv_codec = HyperpriorAutoencoder(arch.mv, seed=seed + 3)
            self.mcnet = MCNet(arch.mc_specs, seed=seed + 4)
            if config.mcp_refine:
                self.refine = RefineNet(arch.refine, seed=seed + 5)
        self.res_codec = HyperpriorAutoencoder(arch.residual, seed=seed + 6)
        if config.c2f:
            self.c2f_codec = HyperpriorAutoencoder(arch.residual, seed=seed + 7)
        if config.ilr_network:
            self.ilr = ILRNet(arch.ilr_specs, seed=seed + 8)

    def submodules(self) -> "OrderedDict[str, Module]":
        names = ("menet", "mv_codec", "mcnet", "refine", "recurrent", "res_codec", "c2f_codec", "ilr")
        return OrderedDict((n, getattr(self, n)) for n in names if hasattr(self, n))

    def layer_table(self, height, width, prefix=""):
        recs = []
        for name, sub in self.submodules().items():
            recs += sub.layer_table(height, width, f"{prefix}{name}.")
        return recs


class DecodedPictureBuffer:
    """Decoded frames only; EEV-0.4 also keeps reference features and state."""

    def __init__(self, model: CodecModel, frame_capacity: int = 1):
        self.model = model
        self.frames = deque(maxlen=frame_capacity)
        self.features = deque(maxlen=FEATURE_DPB)
        self.skips = None
        self.state = None

    def __len__(self):
        return len(self.frames)

    def reset(self) -> None:
        self.frames.clear()
        self.features.clear()
        self.skips = None
        self.state = None

    @property
    def latest(self) -> Tensor:
        if not self.frames:
            raise DPBError("decoded picture buffer is empty")
        return self.frames[-1]

    def push(self, frame: Tensor, state=None) -> None:
        self.frames.append(Tensor(np.asarray(frame.data, dtype=np.float32)))
        if self.model.config.motion_decouple:
            feats, skips = self.model.recurrent.extractor(self.frames[-1])
            self.features.append(feats)
            self.skips = skips
            self.state = state if state is not None else self.model.recurrent.initial_state(frame.shape)

    def snapshot(self) -> tuple:
        return (tuple(self.frames), tuple(self.features), self.skips, self.state)


@dataclass
class FrameStats:
    index: int
    frame_type: str
    bits: dict = field(default_factory=dict)
    mse: float = 0.0
    psnr: float = 0.0
    msssim: Optional[float] = None
    loss: float = 0.0
    recon_sum_error: Optional[float] = None
    recon: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def total_bits(self) -> int:
        return int(sum(self.bits.values()))


@dataclass
class RDPoint:
    bpp: float
    quality: float
    metric: str


def _quality(x: np.ndarray, x_hat: np.ndarray, index: int, ftype: str, bits: dict, config: ModelConfig,
             sum_err: Optional[float] = None) -> FrameStats:
    a, b = to_hwc(x), to_hwc(x_hat)
    mse = float(np.mean((a.astype(np.float64) - b) ** 2))
    h, w = a.shape[:2]
    score = None
    try:
        ms_ssim_scales(h, w)
        score = ms_ssim(a, b, data_range=1.0)
    except ValueError:
        pass
    d = mse if config.metric == "psnr" else (1.0 - score if score is not None else mse)
    total = sum(bits.values())
    return FrameStats(index, ftype, dict(bits), mse, psnr_rgb(a, b, peak=1.0), score,
                      rd_loss(d, total / (h * w), config.lam), sum_err)


def _check_frame(x: Tensor, model: CodecModel) -> None:
    f = model.config.arch.residual.hyper_factor
    h, w = x.shape[2:]
    if x.shape[:2] != (1, 3) or h % f or w % f:
        raise ShapeError(f"frames must be (1, 3, H, W) with H, W multiples of {f}, got {x.shape}")


# -- motion and prediction, shared by both sides

def _predict_classic(ref: Tensor, flow_hat: Tensor, model: CodecModel) -> Tensor:
    warped = ops.bilinear_warp(ref, flow_hat)
    TOOL_CALLS["mc_net"] += 1
    pred = model.mcnet.compensate(warped, ref, flow_hat)
    if model.config.mcp_refine:
        TOOL_CALLS["mcp_refine"] += 1
        pred = model.refine(pred)
    return pred


def _finish(pred: np.ndarray, r_hat: np.ndarray, r2_hat: Optional[np.ndarray], model: CodecModel,
            use_ilr: bool = True) -> tuple:
    """(x_tilde float64, x_hat Tensor); inputs already on the grid."""
    x_tilde = pred + r_hat
    if r2_hat is not None:
        x_tilde = x_tilde + r2_hat
    out = Tensor(x_tilde.astype(np.float32))
    if model.config.ilr_network and use_ilr:
        TOOL_CALLS["ilr"] += 1
        out = model.ilr(out)
    return x_tilde, out


def encode_frame_p(x, dpb: DecodedPictureBuffer, model: CodecModel, index: int = 0,
                   debug_lossless: bool = False) -> tuple:
    """(chunk, x_hat, FrameStats) for one P frame; updates ``dpb``.

    ``debug_lossless`` transmits residuals unquantized and skips the in-loop
    filter so the reconstruction is exact; no chunk is produced in that mode.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))
    _check_frame(x, model)
    cfg = model.config
    ref = dpb.latest
    payloads = []
    bits = {}
    new_state = None
    if cfg.motion_decouple:
        TOOL_CALLS["motion_decouple"] += 1
        rec = model.recurrent
        _, f1, state = predict_motion(list(dpb.features), dpb.state, rec)
        m_c, _, mv_payload, new_state = motion_difference(ref, x, f1, rec, state)
        _, x_bar = progressive_predict(f1, m_c, dpb.skips, rec)
        pred_t = spatiotemporal_refine(x_bar, rec)
    else:
        TOOL_CALLS["me_net"] += 1
        flow = estimate_flow(ref, x, model.menet)
        TOOL_CALLS["mv_codec"] += 1
        res = model.mv_codec.encode(flow)
        flow_hat, mv_payload = res.recon, res.payload
        pred_t = _predict_classic(ref, flow_hat, model)
    payloads.append(Payload(PAYLOAD_MV, mv_payload))
    bits["mv"] = 8 * len(mv_payload)

    pred = _snap(pred_t.data)
    x64 = np.asarray(x.data, dtype=np.float64)
    TOOL_CALLS["residual"] += 1
    if debug_lossless:
        r_hat = x64 - pred
    else:
        res = model.res_codec.encode(Tensor((x64 - pred).astype(np.float32)))
        r_hat = _snap(res.recon.data)
        payloads.append(Payload(PAYLOAD_RESIDUAL, res.payload))
        bits["residual"] = 8 * len(res.payload)
    r2_hat = None
    if cfg.c2f:
        TOOL_CALLS["c2f"] += 1
        if debug_lossless:
            r2_hat = x64 - (pred + r_hat)
        else:
            res2 = model.c2f_codec.encode(Tensor((x64 - (pred + r_hat)).astype(np.float32)))
            r2_hat = _snap(res2.recon.data)
            payloads.append(Payload(PAYLOAD_C2F, res2.payload))
            bits["c2f"] = 8 * len(res2.payload)
    x_tilde, x_hat = _finish(pred, r_hat, r2_hat, model, use_ilr=not debug_lossless)
    sum_err = float(np.max(np.abs(x_tilde - pred - r_hat - (0.0 if r2_hat is None else r2_hat))))
    dpb.push(x_hat, new_state)
    if debug_lossless:
        bits = {}
    stats = _quality(x.data, x_hat.data, index, "P", bits, cfg, sum_err)
    chunk = None if debug_lossless else FrameChunk(FRAME_P, cfg.model_id, index, tuple(payloads))
    return chunk, x_hat, stats


def decode_frame_p(chunk: FrameChunk, dpb: DecodedPictureBuffer, model: CodecModel) -> Tensor:
    cfg = model.config
    if chunk.frame_type != FRAME_P:
        raise ContainerError(f"frame {chunk.frame_index} is not a P frame")
    if chunk.model_id != cfg.model_id:
        raise VersionMismatchError(f"frame {chunk.frame_index} was coded with {version_from_id(chunk.model_id)}"
                                   f" but the decoder is configured for {cfg.version}")
    ref = dpb.latest
    shape = ref.shape
    new_state = None
    if cfg.motion_decouple:
        TOOL_CALLS["motion_decouple"] += 1
        rec = model.recurrent
        _, f1, state = predict_motion(list(dpb.features), dpb.state, rec)
        m_c, new_state = decode_motion_difference(chunk.payload(PAYLOAD_MV), f1, rec, state)
        _, x_bar = progressive_predict(f1, m_c, dpb.skips, rec)
        pred_t = spatiotemporal_refine(x_bar, rec)
    else:
        TOOL_CALLS["mv_codec"] += 1
        flow_hat = model.mv_codec.decode(chunk.payload(PAYLOAD_MV), (shape[0], 2) + shape[2:])
        pred_t = _predict_classic(ref, flow_hat, model)
    pred = _snap(pred_t.data)
    TOOL_CALLS["residual"] += 1
    r_hat = _snap(model.res_codec.decode(chunk.payload(PAYLOAD_RESIDUAL), shape).data)
    r2_hat = None
    if cfg.c2f:
        TOOL_CALLS["c2f"] += 1
        r2_hat = _snap(model.c2f_codec.decode(chunk.payload(PAYLOAD_C2F), shape).data)
    _, x_hat = _finish(pred, r_hat, r2_hat, model)
    dpb.push(x_hat, new_state)
    return x_hat


# -- sequences

def intra_indices(frames: int, intra_period: int) -> list:
    return [i for i in range(frames) if i % intra_period == 0]


def _as_frames(frames) -> list:
    out = []
    for f in frames:
        a = np.asarray(f.data if isinstance(f, Tensor) else f, dtype=np.float32)
        out.append(Tensor(a if a.ndim == 4 else a[None]))
    return out


def encode_video(frames, model: CodecModel, intra_backend=None, keep_recon: bool = False) -> tuple:
    """(container bytes, per-frame stats, RDPoint) for a sequence of (3, H, W) frames.

    ``keep_recon`` stores each encoder-side reconstruction in its stats.
    """
    cfg = model.config
    intra_backend = intra_backend or VerbatimIntra()
    seq = _as_frames(frames)
    if not seq:
        raise ValueError("cannot encode an empty sequence")
    for x in seq:
        _check_frame(x, model)
    h, w = seq[0].shape[2:]
    if any(x.shape != seq[0].shape for x in seq):
        raise ShapeError("all frames must share one shape")
    dpb = DecodedPictureBuffer(model)
    chunks, stats = [], []
    for i, x in enumerate(seq):
        if i % cfg.intra_period == 0:
            TOOL_CALLS["intra"] += 1
            payload, recon, bits = intra_backend.code(x.data)
            dpb.reset()
            x_hat = Tensor(recon)
            dpb.push(x_hat)
            chunks.append(FrameChunk(FRAME_I, cfg.model_id, i, (Payload(PAYLOAD_INTRA, payload),)))
            st = _quality(x.data, recon, i, "I", {"intra": bits}, cfg)
        else:
            chunk, x_hat, st = encode_frame_p(x, dpb, model, index=i)
            chunks.append(chunk)
        if keep_recon:
            st.recon = x_hat.data
        stats.append(st)
    header = StreamHeader(w, h, len(seq), cfg.gop_size, cfg.intra_period, cfg.model_id, cfg.metric_id,
                          int(cfg.lam), ARCH_IDS[cfg.arch.name], intra_backend.backend_id)
    data = write_container(header, chunks)
    quality = [s.psnr for s in stats] if cfg.metric == "psnr" else [s.msssim for s in stats]
    point = RDPoint(8 * len(data) / (len(seq) * h * w),
                    float(np.mean(quality)) if None not in quality else float("nan"), cfg.metric)
    return data, stats, point


def stream_overhead_bits(data: bytes) -> int:
    """Bits of the container that are not payload bytes."""
    return 8 * container_overhead_bytes(read_container(data).chunks)


def model_for_stream(data: bytes, weights=None, seed: int = 0) -> CodecModel:
    """Build the model a stream names, loading ``weights`` (bytes or a WeightStore) if given."""
    from ..nets.weights import WeightStore

    header = read_container(data).header
    config = ModelConfig(version=version_from_id(header.model_id), lam=header.lam,
                         metric=METRICS[header.metric], gop_size=header.gop,
                         intra_period=header.intra_period, arch=arch_by_id(header.arch_id))
    model = CodecModel(config, seed=seed)
    if weights is not None:
        store = weights if isinstance(weights, WeightStore) else WeightStore.from_bytes(weights)
        store.load_into(model)
    return model


def decode_video(data: bytes, model: CodecModel, intra_backend=None, start: int = 0) -> list:
    """Reconstructed frames from index ``start`` (which must be an intra frame) onward."""
    stream = read_container(data)
    header = stream.header
    cfg = model.config
    if header.model_id != cfg.model_id:
        raise VersionMismatchError(f"stream was coded with {version_from_id(header.model_id)}"
                                   f" but the decoder is configured for {cfg.version}")
    if header.arch_id != ARCH_IDS[cfg.arch.name]:
        raise VersionMismatchError(f"stream architecture id {header.arch_id} does not match {cfg.arch.name}")
    if len(stream.chunks) != header.frames:
        raise ContainerError(f"header declares {header.frames} frames, stream has {len(stream.chunks)}")
    backend = intra_backend if intra_backend is not None else backend_for_id(header.intra_backend)
    if not 0 <= start < header.frames:
        raise IndexError(f"start frame {start} outside 0..{header.frames - 1}")
    if stream.chunks[start].frame_type != FRAME_I:
        raise ValueError(f"random access must start at an intra frame; frame {start} is a P frame")
    dpb = DecodedPictureBuffer(model)
    out = []
    for chunk in stream.chunks[start:]:
        if chunk.frame_type == FRAME_I:
            TOOL_CALLS["intra"] += 1
            dpb.reset()
            x_hat = Tensor(backend.decode(chunk.payload(PAYLOAD_INTRA), header.height, header.width))
            dpb.push(x_hat)
        else:
            x_hat = decode_frame_p(chunk, dpb, model)
        out.append(x_hat.data)
    return out

"""Motion decoupling in feature space with ConvLSTM temporal state.

Per P frame, given the decoded reference ``x_ref`` and the recurrent state:

1. ``predict_motion``: the stacked ConvLSTM advances on reference features and
   emits a feature-resolution motion prediction ``m_i``; ``f1`` is the newest
   reference feature map warped by ``m_i``. Costs no bits.
2. ``motion_difference``: an autoencoder over (ref features, cur features, f1)
   codes a decoded feature map; a separate ConvLSTM cell fuses it with ``f1``
   into the signalled correction ``m_c``.
3. ``progressive_predict``: ``f2 = warp(f1, m_c)`` plus a zero-initialized
   residual block, restored to a frame with the reference skip maps.
4. ``spatiotemporal_refine``: RAB refinement with a global skip.

With the default initialization every learned branch starts at zero and the
extractor/restorer pair is an exact space-to-depth / depth-to-space pair, so
the whole chain copies the reference frame exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .nets.autoencoder import CodecArch, HyperpriorAutoencoder
from .nets.refine import RefineArch, RefineNet
from .tensor import GradTape, ShapeError, Tensor, ops
from .tensor.nn import Adam, Conv2d, Deconv2d, Module, conv_stack_table


@dataclass(frozen=True)
class RecurrentConfig:
    features: int = 64          # M
    layers: int = 2             # stacked ConvLSTM units
    stage_channels: int = 32    # extractor width at 1/2 resolution
    init: str = "identity"      # "identity" or "he" for the extractor/restorer
    codec: CodecArch = CodecArch(channels=192, out_channels=64, hidden=128, latent=128, hyper=128,
                                 stages=2, hyper_stages=2)
    refine: RefineArch = RefineArch()
    slope: float = 0.1

    def __post_init__(self):
        if self.init not in ("identity", "he"):
            raise ValueError(f"unknown extractor init {self.init!r}")
        if self.layers < 1:
            raise ValueError("at least one ConvLSTM unit is required")
        if self.init == "identity" and (self.stage_channels < 12 or self.features < 48):
            raise ValueError("identity init needs >= 12 stage channels and >= 48 features")
        if self.codec.channels != 3 * self.features or self.codec.outputs != self.features:
            raise ValueError("difference codec must map 3M channels to M channels")

    @classmethod
    def small(cls) -> "RecurrentConfig":
        """Narrow preset for desk-scale runs and closed-loop tests."""
        m = 48
        return cls(features=m, stage_channels=12,
                   codec=CodecArch(channels=3 * m, out_channels=m, hidden=32, latent=32, hyper=32,
                                   stages=2, hyper_stages=2),
                   refine=RefineArch(channels=16, blocks=2, ratio=4))


def _space_to_depth_weight(cout: int, cin: int, used: int) -> np.ndarray:
    """k3 s2 selector: output channel 4q + 2a + b reads input q at offset (a, b)."""
    w = np.zeros((cout, cin, 3, 3), np.float32)
    for q in range(used):
        for a in range(2):
            for b in range(2):
                w[4 * q + 2 * a + b, q, a + 1, b + 1] = 1.0
    return w


class _Branch(Module):
    """x + conv(leaky(conv(x))), second conv zero-initialized."""

    def __init__(self, channels: int, rng, slope: float):
        self.slope = slope
        self.a = Conv2d(channels, f"k3c{channels}s1", rng)
        self.b = Conv2d(channels, f"k3c{channels}s1", rng, init="zero")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.b(ops.leaky_relu(self.a(x), self.slope)))

    def layer_table(self, height, width, prefix=""):
        return conv_stack_table([self.a, self.b], height, width, prefix)


class FeatureExtractor(Module):
    def __init__(self, cfg: RecurrentConfig, rng):
        c1, m = cfg.stage_channels, cfg.features
        self.down1 = Conv2d(3, f"k3c{c1}s2", rng)
        self.down2 = Conv2d(c1, f"k3c{m}s2", rng)
        if cfg.init == "identity":
            self.down1.weight.data = _space_to_depth_weight(c1, 3, 3)
            self.down2.weight.data = _space_to_depth_weight(m, c1, 12)
        self.branch1 = _Branch(c1, rng, cfg.slope)
        self.branch2 = _Branch(m, rng, cfg.slope)

    def __call__(self, frame: Tensor) -> tuple:
        h, w = frame.shape[2:]
        if h % 4 or w % 4:
            raise ShapeError(f"feature extraction needs dims divisible by 4, got {h}x{w}")
        e1 = self.branch1(self.down1(frame))
        e2 = self.branch2(self.down2(e1))
        return e2, [e1, e2]

    def layer_table(self, height, width, prefix=""):
        recs = self.down1.layer_table(height, width, f"{prefix}down1")
        recs += self.branch1.layer_table(height // 2, width // 2, f"{prefix}branch1.")
        recs += self.down2.layer_table(height // 2, width // 2, f"{prefix}down2")
        return recs + self.branch2.layer_table(height // 4, width // 4, f"{prefix}branch2.")


class FeatureRestorer(Module):
    """Mirror of the extractor; each stage also reads the matching skip map."""

    def __init__(self, cfg: RecurrentConfig, rng):
        c1, m = cfg.stage_channels, cfg.features
        self.branch2 = _Branch(m, rng, cfg.slope)
        self.up2 = Deconv2d(2 * m, f"dk3c{c1}s2", rng)
        self.branch1 = _Branch(c1, rng, cfg.slope)
        # small output layer keeps the untrained reconstruction near zero
        self.up1 = Deconv2d(2 * c1, "dk3c3s2", rng, gain=0.1)
        if cfg.init == "identity":
            # deconv is the adjoint of conv, so the selector inverts itself;
            # skip channels (second half of the input) start unused
            w2 = np.zeros((2 * m, c1, 3, 3), np.float32)
            w2[:m] = _space_to_depth_weight(m, c1, 12)
            w1 = np.zeros((2 * c1, 3, 3, 3), np.float32)
            w1[:c1] = _space_to_depth_weight(c1, 3, 3)
            self.up2.weight.data = w2
            self.up1.weight.data = w1

    def __call__(self, features: Tensor, skips: Sequence[Tensor]) -> Tensor:
        if len(skips) != 2:
            raise ShapeError(f"expected 2 skip maps, got {len(skips)}")
        if skips[1].shape != features.shape:
            raise ShapeError(f"skip {skips[1].shape} does not match features {features.shape}")
        t = self.up2(ops.concat([self.branch2(features), skips[1]], axis=1))
        return self.up1(ops.concat([self.branch1(t), skips[0]], axis=1))

    def layer_table(self, height, width, prefix=""):
        h4, w4 = height // 4, width // 4
        recs = self.branch2.layer_table(h4, w4, f"{prefix}branch2.")
        recs += self.up2.layer_table(h4, w4, f"{prefix}up2")
        recs += self.branch1.layer_table(2 * h4, 2 * w4, f"{prefix}branch1.")
        return recs + self.up1.layer_table(2 * h4, 2 * w4, f"{prefix}up1")


class ConvLSTMCell(Module):
    """Gates from one k3 conv over [x, h]; channel order i, f, o, g."""

    def __init__(self, cin: int, hidden: int, rng, init: str = "he"):
        self.hidden = hidden
        self.conv = Conv2d(cin + hidden, f"k3c{4 * hidden}s1", rng, init=init)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple:
        return convlstm_step(x, h, c, self)

    def layer_table(self, height, width, prefix=""):
        return self.conv.layer_table(height, width, f"{prefix}conv")


def convlstm_step(x: Tensor, h: Tensor, c: Tensor, cell: ConvLSTMCell) -> tuple:
    """c' = f*c + i*g, h' = o*tanh(c')."""
    if h.shape != c.shape:
        raise ShapeError(f"hidden {h.shape} and cell {c.shape} differ")
    if x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise ShapeError(f"input {x.shape} does not match state {h.shape}")
    if h.shape[1] != cell.hidden:
        raise ShapeError(f"state has {h.shape[1]} channels, cell expects {cell.hidden}")
    z = cell.conv(ops.concat([x, h], axis=1))
    m = cell.hidden
    i = ops.sigmoid(ops.slice_channels(z, 0, m))
    f = ops.sigmoid(ops.slice_channels(z, m, 2 * m))
    o = ops.sigmoid(ops.slice_channels(z, 2 * m, 3 * m))
    g = ops.tanh(ops.slice_channels(z, 3 * m, 4 * m))
    c_next = ops.add(ops.mul(f, c), ops.mul(i, g))
    return ops.mul(o, ops.tanh(c_next)), c_next


@dataclass
class RecurrentState:
    layers: list = field(default_factory=list)      # [(h, c)] per stacked unit
    diff: Optional[tuple] = None                    # (h', c') of the difference branch

    @classmethod
    def zeros(cls, cfg: RecurrentConfig, shape: tuple) -> "RecurrentState":
        n, _, h, w = shape

        def pair():
            return (Tensor(np.zeros((n, cfg.features, h, w), np.float32)),
                    Tensor(np.zeros((n, cfg.features, h, w), np.float32)))

        return cls([pair() for _ in range(cfg.layers)], pair())

    def detached(self) -> "RecurrentState":
        return RecurrentState([(Tensor(h.data.copy()), Tensor(c.data.copy())) for h, c in self.layers],
                              None if self.diff is None else
                              (Tensor(self.diff[0].data.copy()), Tensor(self.diff[1].data.copy())))


class RecurrentMotion(Module):
    """All EEV-0.4 motion-decoupling weights."""

    def __init__(self, cfg: RecurrentConfig = RecurrentConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        m = cfg.features
        self.extractor = FeatureExtractor(cfg, rng)
        self.restorer = FeatureRestorer(cfg, rng)
        # unit 0 reads [newest, newest - previous] reference features
        self.cells = [ConvLSTMCell(2 * m if l == 0 else m, m, rng) for l in range(cfg.layers)]
        self.mi_head = Conv2d(m, "k3c2s1", rng, init="zero")
        self.diff_codec = HyperpriorAutoencoder(cfg.codec, seed=seed + 1)
        self.diff_cell = ConvLSTMCell(m, m, rng)
        self.mc_head = Conv2d(2 * m, "k3c2s1", rng, init="zero")
        self.progressive = _Branch(m, rng, cfg.slope)
        self.st_refine = RefineNet(cfg.refine, seed=seed + 2)

    def initial_state(self, frame_shape: tuple) -> RecurrentState:
        n, _, h, w = frame_shape
        return RecurrentState.zeros(self.cfg, (n, self.cfg.features, h // 4, w // 4))

    def layer_table(self, height, width, prefix=""):
        h4, w4 = height // 4, width // 4
        recs = self.extractor.layer_table(height, width, f"{prefix}extractor.")
        recs += self.restorer.layer_table(height, width, f"{prefix}restorer.")
        for i, cell in enumerate(self.cells):
            recs += cell.layer_table(h4, w4, f"{prefix}cell{i}.")
        recs += self.mi_head.layer_table(h4, w4, f"{prefix}mi_head")
        recs += self.diff_codec.layer_table(h4, w4, f"{prefix}diff_codec.")
        recs += self.diff_cell.layer_table(h4, w4, f"{prefix}diff_cell.")
        recs += self.mc_head.layer_table(h4, w4, f"{prefix}mc_head")
        recs += self.progressive.layer_table(h4, w4, f"{prefix}progressive.")
        return recs + self.st_refine.layer_table(height, width, f"{prefix}st_refine.")


def feature_extract(frame: Tensor, net: RecurrentMotion) -> tuple:
    """(features at 1/4 resolution, [skip at 1/2, skip at 1/4])."""
    return net.extractor(frame)


def feature_restore(features: Tensor, skips: Sequence[Tensor], net: RecurrentMotion) -> Tensor:
    return net.restorer(features, skips)


def predict_motion(dpb_features: Sequence[Tensor], state: RecurrentState, net: RecurrentMotion) -> tuple:
    """(m_i, f1, state'); uses only decoded references, so it costs no bits."""
    if not dpb_features:
        raise ValueError("motion prediction needs at least one reference")
    newest = dpb_features[-1]
    prev = dpb_features[-2] if len(dpb_features) > 1 else newest
    x = ops.concat([newest, ops.sub(newest, prev)], axis=1)
    if len(state.layers) != len(net.cells):
        raise ShapeError(f"state has {len(state.layers)} units, model has {len(net.cells)}")
    layers = []
    for cell, (h, c) in zip(net.cells, state.layers):
        h, c = convlstm_step(x, h, c, cell)
        layers.append((h, c))
        x = h
    m_i = net.mi_head(x)
    f1 = ops.bilinear_warp(newest, m_i)
    return m_i, f1, RecurrentState(layers, state.diff)


def _difference_input(ref_frame: Tensor, cur_frame: Tensor, f1: Tensor, net: RecurrentMotion) -> Tensor:
    ref_feat, _ = net.extractor(ref_frame)
    cur_feat, _ = net.extractor(cur_frame)
    return ops.concat([ref_feat, cur_feat, f1], axis=1)


def _difference_head(decoded: Tensor, f1: Tensor, state: RecurrentState, net: RecurrentMotion) -> tuple:
    h, c = state.diff
    h, c = convlstm_step(decoded, h, c, net.diff_cell)
    m_c = net.mc_head(ops.concat([h, f1], axis=1))
    return m_c, RecurrentState(state.layers, (h, c))


def motion_difference(ref_frame: Tensor, cur_frame: Tensor, f1: Tensor, net: RecurrentMotion,
                      state: RecurrentState, mode: str = "inference",
                      rng: Optional[np.random.Generator] = None) -> tuple:
    """(m_c, bits, payload, state') for the signalled motion correction."""
    x = _difference_input(ref_frame, cur_frame, f1, net)
    if mode == "train":
        decoded, bits = net.diff_codec.forward_train(x, rng)
        payload = b""
    elif mode == "inference":
        res = net.diff_codec.encode(x)
        decoded, bits, payload = res.recon, res.bits, res.payload
    else:
        raise ValueError(f"unknown codec mode {mode!r}")
    m_c, state = _difference_head(decoded, f1, state, net)
    return m_c, bits, payload, state


def decode_motion_difference(payload: bytes, f1: Tensor, net: RecurrentMotion,
                             state: RecurrentState) -> tuple:
    """Decoder side of ``motion_difference``: (m_c, state')."""
    n, m, h, w = f1.shape
    decoded = net.diff_codec.decode(payload, (n, 3 * m, h, w))
    return _difference_head(decoded, f1, state, net)


def progressive_predict(f1: Tensor, m_c: Tensor, skips: Sequence[Tensor], net: RecurrentMotion) -> tuple:
    """(f2, x_bar): f2 = refine(warp(f1, m_c)), x_bar = restore(f2, skips)."""
    f2 = net.progressive(ops.bilinear_warp(f1, m_c))
    return f2, net.restorer(f2, skips)


def spatiotemporal_refine(prediction: Tensor, net: RecurrentMotion) -> Tensor:
    return net.st_refine(prediction)


def train_feature_identity(frames, steps: int, learning_rate: float, net: RecurrentMotion) -> list:
    """Fit extractor and restorer to reproduce ``frames`` (N, 3, H, W).

    Returns the reconstruction PSNR in dB (peak 1) before each update and
    after the last one.
    """
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, np.float32))
    opt = Adam(net.extractor.parameters() + net.restorer.parameters(), lr=learning_rate)
    history = []
    for step in range(steps + 1):
        with GradTape() as tape:
            f, skips = net.extractor(x)
            loss = ops.mean(ops.square(ops.sub(net.restorer(f, skips), x)))
        mse = float(loss.item())
        history.append(float("inf") if mse == 0 else -10.0 * np.log10(mse))
        if step == steps:
            break
        opt.zero_grad()
        tape.backward(loss)
        opt.step()
    return history

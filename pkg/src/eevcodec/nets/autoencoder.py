"""Hyperprior autoencoders used for motion fields and residuals.

Analysis: ``stages`` stride-2 convs; synthesis mirrors them with stride-2
deconvs. A two-level hyperprior predicts a per-element Gaussian (mean,
scale) for the main latent; the hyper latent uses a factorized prior.

Inference codes mean-removed symbols ``s = round(y - mu)`` and reconstructs
``y_hat = s + mu``. Encoder and decoder derive ``mu`` and the scales from
the same decoded hyper latent through the same code path, which is what
makes their reconstructions bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..entropy.latent import (
    decode_factorized,
    decode_gaussian,
    encode_factorized,
    encode_gaussian,
    pack_sections,
    unpack_sections,
)
from ..entropy.models import SCALE_MIN, FactorizedPrior, estimate_bits, gaussian_likelihood, rate_bits
from ..entropy.quantize import quantize, round_half_away
from ..tensor import ShapeError, Tensor, ops
from ..tensor.nn import Conv2d, Deconv2d, Module, conv_stack_table


@dataclass(frozen=True)
class CodecArch:
    channels: int = 3
    hidden: int = 128
    latent: int = 128
    hyper: int = 128
    kernel: int = 5
    stages: int = 4
    hyper_stages: int = 2
    slope: float = 0.1
    out_channels: Optional[int] = None

    @property
    def outputs(self) -> int:
        return self.channels if self.out_channels is None else self.out_channels

    @property
    def factor(self) -> int:
        return 2 ** self.stages

    @property
    def hyper_factor(self) -> int:
        return 2 ** (self.stages + self.hyper_stages)


@dataclass
class CodecResult:
    recon: Tensor
    bits: float
    est_bits: float
    payload: bytes


class HyperPrior(Module):
    def __init__(self, arch: CodecArch, rng: np.random.Generator):
        k, c, h = arch.kernel, arch.latent, arch.hyper
        self.slope = arch.slope
        self.analysis = []
        cin = c
        for i in range(arch.hyper_stages):
            self.analysis.append(Conv2d(cin, f"k{k}c{h}s2", rng))
            cin = h
        self.synthesis = []
        for i in range(arch.hyper_stages):
            last = i == arch.hyper_stages - 1
            self.synthesis.append(Deconv2d(cin, f"dk{k}c{2 * c if last else h}s2", rng))
            cin = h
        self.prior = FactorizedPrior(h)
        self.latent = c

    def analyse(self, y: Tensor) -> Tensor:
        for i, conv in enumerate(self.analysis):
            y = conv(y)
            if i < len(self.analysis) - 1:
                y = ops.leaky_relu(y, self.slope)
        return y

    def params(self, z_hat: Tensor) -> tuple:
        """(mean, scale) of the main latent given the decoded hyper latent."""
        t = z_hat
        for i, dec in enumerate(self.synthesis):
            t = dec(t)
            if i < len(self.synthesis) - 1:
                t = ops.leaky_relu(t, self.slope)
        mean = ops.slice_channels(t, 0, self.latent)
        scale = ops.clamp_min(ops.softplus(ops.slice_channels(t, self.latent, 2 * self.latent)), SCALE_MIN)
        return mean, scale

    def layer_table(self, height, width, prefix=""):
        recs = conv_stack_table(self.analysis, height, width, f"{prefix}analysis.")
        h, w = recs[-1].out_hw
        return recs + conv_stack_table(self.synthesis, h, w, f"{prefix}synthesis.")


class HyperpriorAutoencoder(Module):
    def __init__(self, arch: CodecArch, seed: int = 0, zero_synthesis: bool = True):
        self.arch = arch
        rng = np.random.default_rng(seed)
        k = arch.kernel
        self.analysis = []
        cin = arch.channels
        for i in range(arch.stages):
            cout = arch.latent if i == arch.stages - 1 else arch.hidden
            self.analysis.append(Conv2d(cin, f"k{k}c{cout}s2", rng))
            cin = cout
        self.synthesis = []
        for i in range(arch.stages):
            last = i == arch.stages - 1
            cout = arch.outputs if last else arch.hidden
            init = "zero" if (last and zero_synthesis) else "he"
            self.synthesis.append(Deconv2d(cin, f"dk{k}c{cout}s2", rng, init=init))
            cin = cout
        self.hyper = HyperPrior(arch, rng)

    # -- transforms
    def analyse(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.analysis):
            x = conv(x)
            if i < len(self.analysis) - 1:
                x = ops.leaky_relu(x, self.arch.slope)
        return x

    def synthesise(self, y: Tensor) -> Tensor:
        for i, dec in enumerate(self.synthesis):
            y = dec(y)
            if i < len(self.synthesis) - 1:
                y = ops.leaky_relu(y, self.arch.slope)
        return y

    def _check(self, x: Tensor) -> None:
        n, c, h, w = x.shape
        f = self.arch.hyper_factor
        if c != self.arch.channels:
            raise ShapeError(f"codec expects {self.arch.channels} channels, got {c}")
        if h % f or w % f:
            raise ShapeError(f"codec input dims must be multiples of {f}, got {h}x{w}")

    def latent_shapes(self, shape: tuple) -> tuple:
        n, _, h, w = shape
        a = self.arch
        return ((n, a.latent, h // a.factor, w // a.factor),
                (n, a.hyper, h // a.hyper_factor, w // a.hyper_factor))

    # -- training path
    def forward_train(self, x: Tensor, rng: np.random.Generator) -> tuple:
        """(recon, rate in bits) with additive-noise quantization."""
        self._check(x)
        y = self.analyse(x)
        z = self.hyper.analyse(y)
        z_t = quantize(z, "train", rng)
        mean, scale = self.hyper.params(z_t)
        y_t = quantize(y, "train", rng)
        bits = ops.add(rate_bits(gaussian_likelihood(y_t, mean, scale)),
                       rate_bits(self.hyper.prior.likelihood(z_t)))
        return self.synthesise(y_t), bits

    # -- inference path
    def encode(self, x: Tensor) -> CodecResult:
        self._check(x)
        y = self.analyse(x)
        z = self.hyper.analyse(y)
        z_sym = round_half_away(z.data).astype(np.int64)
        z_hat = Tensor(z_sym.astype(np.float32))
        mean, scale = self.hyper.params(z_hat)
        y_sym = round_half_away(y.data - mean.data).astype(np.int64)
        y_hat = Tensor(y_sym.astype(np.float32) + mean.data)
        recon = self.synthesise(y_hat)
        payload = pack_sections([encode_factorized(z_sym, self.hyper.prior),
                                 encode_gaussian(y_sym, scale.data)])
        est = (estimate_bits(gaussian_likelihood(y_hat, mean, scale))
               + estimate_bits(self.hyper.prior.likelihood(z_hat)))
        return CodecResult(recon, 8.0 * len(payload), est, payload)

    def decode(self, payload: bytes, shape: tuple) -> Tensor:
        """Reconstruction for an input of ``shape`` (N, C, H, W) from its payload."""
        y_shape, z_shape = self.latent_shapes(shape)
        z_bytes, y_bytes = unpack_sections(payload, 2)
        z_sym = decode_factorized(z_bytes, self.hyper.prior, z_shape)
        z_hat = Tensor(z_sym.astype(np.float32))
        mean, scale = self.hyper.params(z_hat)
        y_sym = decode_gaussian(y_bytes, scale.data)
        y_hat = Tensor(y_sym.astype(np.float32) + mean.data)
        return self.synthesise(y_hat)

    def layer_table(self, height, width, prefix=""):
        recs = conv_stack_table(self.analysis, height, width, f"{prefix}analysis.")
        h, w = recs[-1].out_hw
        recs += conv_stack_table(self.synthesis, h, w, f"{prefix}synthesis.")
        recs += self.hyper.layer_table(h, w, f"{prefix}hyper.")
        return recs


def mv_codec(flow: Tensor, net: HyperpriorAutoencoder, mode: str = "inference",
             rng: Optional[np.random.Generator] = None):
    """Code a 2-channel motion field; returns (flow_hat, bits, payload)."""
    if flow.shape[1] != 2:
        raise ShapeError(f"motion field must have 2 channels, got {flow.shape[1]}")
    return _run(flow, net, mode, rng)


def residual_codec(residual: Tensor, net: HyperpriorAutoencoder, mode: str = "inference",
                   rng: Optional[np.random.Generator] = None):
    """Code a 3-channel residual; returns (res_hat, bits, payload)."""
    if residual.shape[1] != 3:
        raise ShapeError(f"residual must have 3 channels, got {residual.shape[1]}")
    return _run(residual, net, mode, rng)


def _run(x, net, mode, rng):
    if mode == "train":
        recon, bits = net.forward_train(x, rng)
        return recon, bits, b""
    if mode != "inference":
        raise ValueError(f"unknown codec mode {mode!r}")
    res = net.encode(x)
    return res.recon, res.bits, res.payload

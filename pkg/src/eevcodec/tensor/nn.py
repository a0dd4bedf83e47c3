"""Parameter containers, conv layers and an Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from . import ops
from .core import Tensor
from .layerspec import LayerSpec, parse_layer_spec


@dataclass(frozen=True)
class LayerRecord:
    """One conv/deconv layer as seen by complexity accounting."""

    name: str
    kind: str
    kernel: int
    cin: int
    cout: int
    stride: int
    in_hw: tuple
    out_hw: tuple

    @property
    def params(self) -> int:
        return self.kernel * self.kernel * self.cin * self.cout + self.cout

    @property
    def macs(self) -> int:
        # counted on the output grid for both kinds
        h, w = self.out_hw
        return self.kernel * self.kernel * self.cin * self.cout * h * w


class Module:
    """Minimal parameter tree: attributes that are Tensors with
    ``requires_grad`` are parameters, Modules and lists of Modules nest."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def shapes(self) -> dict[str, tuple]:
        return {name: p.shape for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"missing weights: {', '.join(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def layer_table(self, height: int, width: int, prefix: str = "") -> list[LayerRecord]:
        raise NotImplementedError(type(self).__name__)


def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / max(fan_in, 1)))


class Conv2d(Module):
    def __init__(self, cin: int, spec: Union[str, LayerSpec], rng: np.random.Generator,
                 init: str = "he", gain: float = 1.0):
        spec = parse_layer_spec(spec) if isinstance(spec, str) else spec
        if spec.op_kind != "conv":
            raise ValueError(f"Conv2d got a deconv spec {spec}")
        self.spec = spec
        self.cin = cin
        k, cout = spec.kernel, spec.channels
        shape = (cout, cin, k, k)
        if init == "zero":
            w = np.zeros(shape, np.float32)
        else:
            w = rng.normal(0.0, gain * _he_std(cin * k * k), shape).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.spec.stride)

    def out_hw(self, h: int, w: int) -> tuple:
        s = self.spec.stride
        k = self.spec.kernel
        p = (k - 1) // 2
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def layer_table(self, height, width, prefix=""):
        s = self.spec
        return [LayerRecord(prefix.rstrip("."), "conv", s.kernel, self.cin, s.channels, s.stride,
                            (height, width), self.out_hw(height, width))]


class Deconv2d(Module):
    def __init__(self, cin: int, spec: Union[str, LayerSpec], rng: np.random.Generator,
                 init: str = "he", gain: float = 1.0):
        spec = parse_layer_spec(spec) if isinstance(spec, str) else spec
        if spec.op_kind != "deconv":
            raise ValueError(f"Deconv2d got a conv spec {spec}")
        self.spec = spec
        self.cin = cin
        k, cout = spec.kernel, spec.channels
        shape = (cin, cout, k, k)
        if init == "zero":
            w = np.zeros(shape, np.float32)
        else:
            fan_in = max(cin * k * k // (spec.stride ** 2), 1)
            w = rng.normal(0.0, gain * _he_std(fan_in), shape).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.deconv2d(x, self.weight, self.bias, stride=self.spec.stride)

    def layer_table(self, height, width, prefix=""):
        s = self.spec
        return [LayerRecord(prefix.rstrip("."), "deconv", s.kernel, self.cin, s.channels, s.stride,
                            (height, width), (height * s.stride, width * s.stride))]


def conv_stack_table(layers: Sequence[Module], height: int, width: int, prefix: str) -> list:
    records = []
    h, w = height, width
    for i, layer in enumerate(layers):
        rec = layer.layer_table(h, w, f"{prefix}{i}")
        records.extend(rec)
        h, w = rec[-1].out_hw
    return records


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: Optional[float] = None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.clip_norm is not None:
            total = float(np.sqrt(np.sum([np.sum(g.astype(np.float64) ** 2) for g in grads])))
            if total > self.clip_norm:
                grads = [g * (self.clip_norm / total) for g in grads]
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

"""Latent quantization: rounding for inference, additive uniform noise for training."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..tensor import Tensor
from ..tensor.core import record


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (1.5 -> 2, -1.5 -> -2)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(latent: Tensor, mode: str = "inference", rng: Optional[np.random.Generator] = None) -> Tensor:
    """``inference`` rounds; ``train`` adds U(-0.5, 0.5) noise from ``rng``.

    Both modes pass gradients straight through to ``latent``.
    """
    if mode == "inference":
        out = Tensor(round_half_away(latent.data).astype(latent.dtype))
    elif mode == "train":
        if rng is None:
            raise ValueError("train-mode quantization needs a seeded noise source")
        noise = rng.uniform(-0.5, 0.5, size=latent.shape).astype(latent.dtype)
        # uniform() may return exactly -0.5; keep the open interval
        noise[noise <= -0.5] = 0.0
        out = Tensor(latent.data + noise)
    else:
        raise ValueError(f"unknown quantization mode {mode!r}")
    return record("quantize", (latent,), out, lambda g: (g,))

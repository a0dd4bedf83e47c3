"""Probability models for integer latents and their 16-bit CDF tables.

Likelihoods are differentiable :class:`Tensor` expressions used for the
rate term during training. CDF tables are the frozen integer form the
range coder consumes; encoder and decoder build them from identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, ndtr

from ..tensor import Tensor, ops
from ..tensor.nn import Module

PRECISION = 16
TOTAL = 1 << PRECISION
LIKELIHOOD_FLOOR = 1e-9
SCALE_MIN = 0.11
MAX_ALPHABET = 1 << 14


class CdfError(ValueError):
    pass


def _abs_sign(d: np.ndarray) -> np.ndarray:
    # +1 for d >= 0; evaluating on the negative side keeps CDF differences
    # away from 1 - 1 cancellation in the far right tail
    return np.where(d >= 0, 1.0, -1.0).astype(d.dtype)


def gaussian_likelihood(latent: Tensor, mean: Tensor, scale: Tensor) -> Tensor:
    """Mass of the unit bin around ``latent`` under N(mean, scale^2), floored at 1e-9."""
    if np.any(scale.data <= 0):
        raise ValueError("gaussian_likelihood needs strictly positive scales")
    d = ops.sub(latent, mean)
    s = Tensor(_abs_sign(d.data))
    neg_abs = ops.mul(ops.mul(d, s), -1.0)
    upper = ops.normal_cdf(ops.div(ops.add(neg_abs, 0.5), scale))
    lower = ops.normal_cdf(ops.div(ops.sub(neg_abs, 0.5), scale))
    return ops.clamp_min(ops.sub(upper, lower), LIKELIHOOD_FLOOR)


def estimate_bits(likelihoods) -> float:
    """Shannon cost in bits, sum of -log2 p."""
    p = likelihoods.data if isinstance(likelihoods, Tensor) else np.asarray(likelihoods)
    if np.any(p <= 0):
        raise ValueError("likelihoods must be strictly positive")
    return float(-np.sum(np.log2(p.astype(np.float64))))


def rate_bits(likelihoods: Tensor) -> Tensor:
    """Differentiable counterpart of :func:`estimate_bits`."""
    return ops.mul(ops.sum(ops.log(likelihoods)), -1.0 / np.log(2.0))


class FactorizedPrior(Module):
    """Per-channel logistic with learned location and log-scale.

    At initialization (location 0, scale 1) the mass of the zero bin is
    sigmoid(0.5) - sigmoid(-0.5) = 0.2449.
    """

    def __init__(self, channels: int):
        self.channels = channels
        self.loc = Tensor(np.zeros((1, channels, 1, 1), np.float32), requires_grad=True)
        self.log_scale = Tensor(np.zeros((1, channels, 1, 1), np.float32), requires_grad=True)

    def likelihood(self, latent: Tensor) -> Tensor:
        if latent.shape[1] != self.channels:
            raise ValueError(f"prior has {self.channels} channels, latent has {latent.shape[1]}")
        d = ops.sub(latent, self.loc)
        s = Tensor(_abs_sign(d.data))
        neg_abs = ops.mul(ops.mul(d, s), -1.0)
        inv_scale = ops.exp(ops.mul(self.log_scale, -1.0))
        upper = ops.sigmoid(ops.mul(ops.add(neg_abs, 0.5), inv_scale))
        lower = ops.sigmoid(ops.mul(ops.sub(neg_abs, 0.5), inv_scale))
        return ops.clamp_min(ops.sub(upper, lower), LIKELIHOOD_FLOOR)

    def cdf_table(self, lo: int, hi: int) -> "CdfTable":
        """One row per channel over the integer alphabet [lo, hi], tails folded."""
        loc = self.loc.data.reshape(-1, 1).astype(np.float64)
        scale = np.exp(self.log_scale.data.reshape(-1, 1).astype(np.float64))
        return build_cdf(LogisticModel(loc, scale), (lo, hi), fold_tails=True)


@dataclass(frozen=True)
class GaussianModel:
    """N(mean, scale^2) per context; ``mean`` and ``scale`` are (contexts, 1)."""

    mean: np.ndarray
    scale: np.ndarray

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return ndtr((x - self.mean) / self.scale)


@dataclass(frozen=True)
class LogisticModel:
    loc: np.ndarray
    scale: np.ndarray

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return expit((x - self.loc) / self.scale)


@dataclass(frozen=True)
class UniformModel:
    """Equal mass on every symbol of the bounds."""

    def cdf(self, x: np.ndarray) -> Optional[np.ndarray]:
        return None


@dataclass
class CdfTable:
    """Integer CDFs, one row per context, over symbols ``offset .. offset + L - 1``.

    Row ``r`` satisfies ``cdf[r, 0] == 0``, ``cdf[r, L] == 2**16`` and
    ``cdf[r, i + 1] - cdf[r, i] >= 1``.
    """

    cdf: np.ndarray
    offset: int

    @property
    def alphabet(self) -> int:
        return self.cdf.shape[1] - 1

    @property
    def contexts(self) -> int:
        return self.cdf.shape[0]

    def probabilities(self) -> np.ndarray:
        return np.diff(self.cdf, axis=1) / TOTAL

    def validate(self) -> None:
        c = self.cdf
        if c.ndim != 2 or c.shape[1] < 2:
            raise CdfError("CDF table must be (contexts, L + 1) with L >= 1")
        if np.any(c[:, 0] != 0) or np.any(c[:, -1] != TOTAL):
            raise CdfError("CDF rows must start at 0 and end at 2**16")
        if np.any(np.diff(c, axis=1) < 1):
            raise CdfError("every symbol needs at least one count")


def pmf_to_cdf(pmf: np.ndarray) -> np.ndarray:
    """Quantize rows of a pmf to 16-bit counts with a floor of one count per symbol.

    counts = 1 + floor(p * (2**16 - L)); the leftover counts go to each row's
    most probable symbol. Deterministic for identical inputs.
    """
    pmf = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    n, length = pmf.shape
    if length < 1 or length > MAX_ALPHABET:
        raise CdfError(f"alphabet size {length} outside [1, {MAX_ALPHABET}]")
    pmf = np.clip(pmf, 0.0, None)
    sums = pmf.sum(axis=1, keepdims=True)
    pmf = np.where(sums > 0, pmf / np.where(sums > 0, sums, 1.0), 1.0 / length)
    counts = 1 + np.floor(pmf * (TOTAL - length)).astype(np.int64)
    short = TOTAL - counts.sum(axis=1)
    counts[np.arange(n), np.argmax(pmf, axis=1)] += short
    cdf = np.zeros((n, length + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cdf[:, 1:])
    return cdf


def build_cdf(model, bounds: tuple, fold_tails: bool = False, max_clipped: float = 0.01) -> CdfTable:
    """Frozen 16-bit table of ``model`` over the integer range ``bounds = (lo, hi)``.

    Without ``fold_tails`` more than ``max_clipped`` probability mass falling
    outside the bounds is an error; with it, the tail mass is assigned to the
    two end symbols.
    """
    lo, hi = int(bounds[0]), int(bounds[1])
    if hi < lo:
        raise CdfError(f"empty bounds [{lo}, {hi}]")
    length = hi - lo + 1
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    cdf_vals = model.cdf(edges[None, :])
    if cdf_vals is None:
        pmf = np.full((1, length), 1.0 / length)
    else:
        cdf_vals = np.atleast_2d(cdf_vals)
        pmf = np.diff(cdf_vals, axis=1)
        below = cdf_vals[:, :1]
        above = 1.0 - cdf_vals[:, -1:]
        clipped = (below + above).ravel()
        if fold_tails:
            pmf[:, :1] += below
            pmf[:, -1:] += above
        elif np.any(clipped > max_clipped):
            worst = float(clipped.max())
            raise CdfError(f"bounds [{lo}, {hi}] clip {worst:.2%} of the model mass")
    table = CdfTable(pmf_to_cdf(pmf), lo)
    table.validate()
    return table


def gaussian_cdf_table(scale: np.ndarray, lo: int, hi: int) -> CdfTable:
    """Zero-mean Gaussian table per element for mean-removed symbols."""
    scale = np.asarray(scale, dtype=np.float64).reshape(-1, 1)
    return build_cdf(GaussianModel(np.zeros_like(scale), scale), (lo, hi), fold_tails=True)

"""Byte coding of integer latent tensors under the factorized and Gaussian models.

Each coded tensor is a section: ``lo:i16 hi:i16`` alphabet bounds followed by
range-coded segments of at most ``SEGMENT`` symbols, each prefixed by its
byte length (u32). Segmenting bounds the size of the per-element CDF tables.
"""

from __future__ import annotations

import struct

import numpy as np

from .models import MAX_ALPHABET, CdfTable, FactorizedPrior, gaussian_cdf_table
from .rangecoder import range_decode, range_encode

SEGMENT = 1 << 15
_BOUNDS = struct.Struct("<hh")
_LEN = struct.Struct("<I")


class LatentCodingError(ValueError):
    pass


def pack_sections(sections) -> bytes:
    return b"".join(_LEN.pack(len(s)) + s for s in sections)


def unpack_sections(data: bytes, count: int) -> list:
    out, pos = [], 0
    for i in range(count):
        if pos + 4 > len(data):
            raise LatentCodingError(f"section {i} length prefix missing")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise LatentCodingError(f"section {i} overruns the payload")
        out.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise LatentCodingError(f"{len(data) - pos} unexpected trailing bytes")
    return out


def symbol_bounds(symbols: np.ndarray) -> tuple:
    """Per-tensor alphabet [min - 1, max + 1]."""
    if symbols.size == 0:
        return 0, 0
    lo, hi = int(symbols.min()) - 1, int(symbols.max()) + 1
    if hi - lo + 1 > MAX_ALPHABET or lo < -(1 << 15) or hi >= (1 << 15):
        raise LatentCodingError(f"latent range [{lo}, {hi}] too wide to code")
    return lo, hi


def _segments(n: int):
    for start in range(0, n, SEGMENT):
        yield start, min(start + SEGMENT, n)


def _read_segments(body: bytes, n: int, decode_one) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for start, stop in _segments(n):
        if pos + 4 > len(body):
            raise LatentCodingError("segment length prefix missing")
        (size,) = _LEN.unpack_from(body, pos)
        pos += 4
        out[start:stop] = decode_one(body[pos:pos + size], start, stop)
        pos += size
    if pos != len(body):
        raise LatentCodingError("unexpected bytes after the last segment")
    return out


def _channel_index(shape: tuple) -> np.ndarray:
    n, c, h, w = shape
    return np.broadcast_to(np.arange(c).reshape(1, c, 1), (n, c, h * w)).reshape(-1)


def encode_factorized(symbols: np.ndarray, prior: FactorizedPrior) -> bytes:
    sym = np.asarray(symbols, dtype=np.int64)
    lo, hi = symbol_bounds(sym)
    flat = sym.reshape(-1)
    parts = [_BOUNDS.pack(lo, hi)]
    if flat.size:
        table = prior.cdf_table(lo, hi)
        ctx = _channel_index(sym.shape)
        for start, stop in _segments(flat.size):
            seg = range_encode(flat[start:stop], table, ctx[start:stop])
            parts.append(_LEN.pack(len(seg)) + seg)
    return b"".join(parts)


def decode_factorized(data: bytes, prior: FactorizedPrior, shape: tuple) -> np.ndarray:
    if len(data) < _BOUNDS.size:
        raise LatentCodingError("missing latent bounds")
    lo, hi = _BOUNDS.unpack_from(data)
    n = int(np.prod(shape))
    if n == 0:
        return np.zeros(shape, dtype=np.int64)
    table = prior.cdf_table(lo, hi)
    ctx = _channel_index(shape)
    flat = _read_segments(data[_BOUNDS.size:], n,
                          lambda b, s, e: range_decode(b, table, e - s, ctx[s:e]))
    return flat.reshape(shape)


def encode_gaussian(symbols: np.ndarray, scales: np.ndarray) -> bytes:
    """Code mean-removed integer symbols, element ``i`` under N(0, scales[i]^2)."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    sc = np.asarray(scales, dtype=np.float64).reshape(-1)
    if sc.size != sym.size:
        raise LatentCodingError(f"{sc.size} scales for {sym.size} symbols")
    lo, hi = symbol_bounds(sym)
    parts = [_BOUNDS.pack(lo, hi)]
    for start, stop in _segments(sym.size):
        table = gaussian_cdf_table(sc[start:stop], lo, hi)
        seg = range_encode(sym[start:stop], table)
        parts.append(_LEN.pack(len(seg)) + seg)
    return b"".join(parts)


def decode_gaussian(data: bytes, scales: np.ndarray) -> np.ndarray:
    if len(data) < _BOUNDS.size:
        raise LatentCodingError("missing latent bounds")
    lo, hi = _BOUNDS.unpack_from(data)
    sc = np.asarray(scales, dtype=np.float64).reshape(-1)

    def one(b, s, e):
        return range_decode(b, gaussian_cdf_table(sc[s:e], lo, hi), e - s)

    if sc.size == 0:
        return np.zeros(0, dtype=np.int64)
    return _read_segments(data[_BOUNDS.size:], sc.size, one).reshape(np.shape(scales))


def table_bits(symbols: np.ndarray, table: CdfTable, contexts=None) -> float:
    """Ideal cost of ``symbols`` under the integer table itself."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    rows = np.zeros(sym.size, dtype=np.int64) if contexts is None else np.asarray(contexts).reshape(-1)
    if contexts is None and table.contexts == sym.size:
        rows = np.arange(sym.size)
    p = table.probabilities()[rows, sym - table.offset]
    return float(-np.log2(p).sum())

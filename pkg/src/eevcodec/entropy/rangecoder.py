"""32-bit range coder over 16-bit integer CDF tables.

The encoder keeps ``low`` below 2**32 and propagates carries into the bytes
already written. Flushing emits the fewest bytes that pin a value inside the
final interval; the decoder pads with zero bytes, so a stream is exactly
as long as it needs to be.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Optional, Sequence

import numpy as np

from .models import PRECISION, CdfTable

_TOP = 1 << 24
_MASK32 = (1 << 32) - 1
_MAX_PAD = 4


class RangeCoderError(ValueError):
    pass


class SymbolOutOfRange(RangeCoderError):
    pass


class TruncatedStream(RangeCoderError):
    pass


def _rows(cdfs: CdfTable, count: int, contexts: Optional[Sequence[int]]) -> np.ndarray:
    if contexts is None:
        if cdfs.contexts == 1:
            return np.zeros(count, dtype=np.int64)
        if cdfs.contexts == count:
            return np.arange(count, dtype=np.int64)
        raise RangeCoderError(
            f"table has {cdfs.contexts} contexts for {count} symbols; pass explicit contexts")
    ctx = np.asarray(contexts, dtype=np.int64).reshape(-1)
    if ctx.size != count:
        raise RangeCoderError(f"{ctx.size} contexts for {count} symbols")
    if count and (ctx.min() < 0 or ctx.max() >= cdfs.contexts):
        raise RangeCoderError("context index outside the table")
    return ctx


def range_encode(symbols, cdfs: CdfTable, contexts: Optional[Sequence[int]] = None) -> bytes:
    """Encode integer ``symbols``; symbol ``i`` uses row ``contexts[i]`` of ``cdfs``."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    n = sym.size
    rows = _rows(cdfs, n, contexts)
    idx = sym - cdfs.offset
    if n and (idx.min() < 0 or idx.max() >= cdfs.alphabet):
        bad = int(sym[(idx < 0) | (idx >= cdfs.alphabet)][0])
        raise SymbolOutOfRange(
            f"symbol {bad} outside table bounds [{cdfs.offset}, {cdfs.offset + cdfs.alphabet - 1}]")
    table = cdfs.cdf
    starts = table[rows, idx].tolist()
    ends = table[rows, idx + 1].tolist()

    out = bytearray()
    low = 0
    rng = _MASK32
    shift = PRECISION
    for cum, nxt in zip(starts, ends):
        r = rng >> shift
        low += r * cum
        rng = r * (nxt - cum)
        if low > _MASK32:
            low &= _MASK32
            i = len(out) - 1
            while out[i] == 0xFF:
                out[i] = 0
                i -= 1
            out[i] += 1
        while rng < _TOP:
            out.append(low >> 24)
            low = (low << 8) & _MASK32
            rng <<= 8
    _flush(out, low, rng)
    return bytes(out)


def _flush(out: bytearray, low: int, rng: int) -> None:
    high = low + rng
    for k in range(5):
        step = 1 << (32 - 8 * k)
        value = -(-low // step) * step
        if value < high:
            break
    if value > _MASK32:
        value &= _MASK32
        i = len(out) - 1
        while out[i] == 0xFF:
            out[i] = 0
            i -= 1
        out[i] += 1
    for j in range(k):
        out.append((value >> (24 - 8 * j)) & 0xFF)


def range_decode(data: bytes, cdfs: CdfTable, count: int,
                 contexts: Optional[Sequence[int]] = None) -> np.ndarray:
    """Inverse of :func:`range_encode`; returns ``count`` int64 symbols."""
    rows = _rows(cdfs, count, contexts).tolist()
    table = [row.tolist() for row in cdfs.cdf]
    alphabet = cdfs.alphabet
    buf = bytes(data)
    size = len(buf)
    pos = 0
    code = 0
    for _ in range(4):
        code = (code << 8) | (buf[pos] if pos < size else 0)
        pos += 1
    rng = _MASK32
    shift = PRECISION
    out = [0] * count
    for i in range(count):
        row = table[rows[i]]
        r = rng >> shift
        v = code // r
        if v >= row[-1]:
            raise TruncatedStream(f"corrupt or truncated stream at symbol {i}")
        s = bisect_right(row, v) - 1
        cum = row[s]
        code -= r * cum
        rng = r * (row[s + 1] - cum)
        while rng < _TOP:
            code = ((code << 8) | (buf[pos] if pos < size else 0)) & _MASK32
            pos += 1
            rng <<= 8
        out[i] = s
    if pos - size > _MAX_PAD:
        raise TruncatedStream(f"stream ended {pos - size - _MAX_PAD} bytes early")
    if count and max(out) >= alphabet:
        raise TruncatedStream("decoded symbol outside the alphabet")
    return np.asarray(out, dtype=np.int64) + cdfs.offset

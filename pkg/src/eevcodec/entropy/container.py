"""Checksummed little-endian framing shared by bitstreams ("EEVB") and weight files ("EEVW").

Frame layout::

    magic[4] version:u16 flags:u16 total_len:u32 header_crc:u32   (16-byte preamble)
    body
    crc32:u32                                                       (over every preceding byte)

``header_crc`` covers the first 12 bytes, so a damaged length field is
reported as corruption rather than truncation.

Bitstream body::

    width:u16 height:u16 frames:u32 gop:u16 intra_period:u16 model_id:u8 metric:u8
    lambda:u32 arch_id:u8 intra_backend:u8 chunk_count:u32
    chunk*  = length:u32 frame_type:u8 model_id:u8 frame_index:u32 payload_count:u8 payload*
    payload = kind:u8 length:u32 bytes

The motion prediction of the recurrent model is derived at the decoder and
never appears in a payload; only its signalled difference does.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

PREAMBLE = struct.Struct("<4sHHII")
CRC = struct.Struct("<I")
BITSTREAM_MAGIC = b"EEVB"
WEIGHTS_MAGIC = b"EEVW"
FORMAT_VERSION = 1

GLOBAL_HEADER = struct.Struct("<HHIHHBBIBBI")
CHUNK_HEAD = struct.Struct("<IBBIB")
PAYLOAD_HEAD = struct.Struct("<BI")

FRAME_I = ord("I")
FRAME_P = ord("P")

PAYLOAD_INTRA = 1
PAYLOAD_MV = 2
PAYLOAD_RESIDUAL = 3
PAYLOAD_C2F = 4
PAYLOAD_NAMES = {PAYLOAD_INTRA: "intra", PAYLOAD_MV: "mv", PAYLOAD_RESIDUAL: "residual", PAYLOAD_C2F: "c2f"}


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class CrcError(ContainerError):
    pass


class LengthError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


def _bit_distance(a: bytes, b: bytes) -> int:
    return sum(bin(x ^ y).count("1") for x, y in zip(a, b))


def frame(magic: bytes, body: bytes, flags: int = 0, version: int = FORMAT_VERSION) -> bytes:
    total = PREAMBLE.size + len(body) + CRC.size
    head = struct.pack("<4sHHI", magic, version, flags, total)
    pre = head + CRC.pack(zlib.crc32(head))
    data = pre + body
    return data + CRC.pack(zlib.crc32(data))


def unframe(data: bytes, magic: bytes, describe_truncation=None) -> tuple:
    """Validate framing and return ``(version, flags, body)``.

    Checks run in order: short input, magic, header CRC, declared length,
    trailing CRC. A magic that is a few bit flips away from the expected one
    with a failing header CRC is treated as corruption.
    """
    data = bytes(data)
    if len(data) < PREAMBLE.size + CRC.size:
        raise LengthError(f"{len(data)} bytes is shorter than the {PREAMBLE.size + CRC.size}-byte minimum")
    got_magic, version, flags, total, head_crc = PREAMBLE.unpack_from(data)
    head_ok = zlib.crc32(data[:12]) == head_crc
    if got_magic != magic:
        if not head_ok and _bit_distance(got_magic, magic) <= 2:
            raise CrcError("header CRC mismatch (damaged magic)")
        raise BadMagicError(f"expected magic {magic!r}, found {got_magic!r}")
    if not head_ok:
        raise CrcError("header CRC mismatch")
    if total != len(data):
        where = describe_truncation(data[PREAMBLE.size:]) if describe_truncation else "body"
        raise LengthError(f"declared length {total} but file has {len(data)} bytes; truncated in {where}")
    (trailer,) = CRC.unpack_from(data, len(data) - CRC.size)
    if zlib.crc32(data[:-CRC.size]) != trailer:
        raise CrcError("trailing CRC mismatch")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}")
    return version, flags, data[PREAMBLE.size:-CRC.size]


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    frames: int
    gop: int = 16
    intra_period: int = 16
    model_id: int = 1
    metric: int = 0
    lam: int = 2048
    arch_id: int = 0
    intra_backend: int = 0


@dataclass(frozen=True)
class Payload:
    kind: int
    data: bytes

    @property
    def name(self) -> str:
        return PAYLOAD_NAMES.get(self.kind, f"kind{self.kind}")


@dataclass(frozen=True)
class FrameChunk:
    frame_type: int
    model_id: int
    frame_index: int
    payloads: tuple = field(default_factory=tuple)

    def payload(self, kind: int) -> bytes:
        for p in self.payloads:
            if p.kind == kind:
                return p.data
        raise ContainerError(f"frame {self.frame_index} has no {PAYLOAD_NAMES.get(kind, kind)} payload")

    def encoded_size(self) -> int:
        return CHUNK_HEAD.size + sum(PAYLOAD_HEAD.size + len(p.data) for p in self.payloads)


@dataclass(frozen=True)
class Bitstream:
    header: StreamHeader
    chunks: tuple


def container_overhead_bytes(chunks) -> int:
    """Bytes of framing, headers and length prefixes around the payload bytes."""
    payload_bytes = sum(len(p.data) for c in chunks for p in c.payloads)
    total = PREAMBLE.size + GLOBAL_HEADER.size + CRC.size + sum(c.encoded_size() for c in chunks)
    return total - payload_bytes


def write_container(header: StreamHeader, chunks) -> bytes:
    parts = [GLOBAL_HEADER.pack(header.width, header.height, header.frames, header.gop,
                                header.intra_period, header.model_id, header.metric, header.lam,
                                header.arch_id, header.intra_backend, len(chunks))]
    for c in chunks:
        body = b"".join(PAYLOAD_HEAD.pack(p.kind, len(p.data)) + p.data for p in c.payloads)
        length = CHUNK_HEAD.size - 4 + len(body)
        parts.append(CHUNK_HEAD.pack(length, c.frame_type, c.model_id, c.frame_index, len(c.payloads)))
        parts.append(body)
    return frame(BITSTREAM_MAGIC, b"".join(parts))


def _chunk_walk(body: bytes):
    """Yield (index, start, end) for each chunk until the body runs out."""
    if len(body) < GLOBAL_HEADER.size:
        yield None, 0, GLOBAL_HEADER.size
        return
    count = GLOBAL_HEADER.unpack_from(body)[-1]
    pos = GLOBAL_HEADER.size
    for i in range(count):
        if pos + 4 > len(body):
            yield i, pos, pos + 4
            return
        (length,) = struct.unpack_from("<I", body, pos)
        yield i, pos, pos + 4 + length
        pos += 4 + length


def _describe_truncation(body_and_more: bytes) -> str:
    # the truncated file still ends with 4 bytes that were meant as a CRC;
    # treat everything as body and report the first chunk that overruns it
    body = body_and_more
    for i, start, end in _chunk_walk(body):
        if end > len(body) - CRC.size:
            return "global header" if i is None else f"chunk {i}"
    return "trailing CRC"


def read_container(data: bytes) -> Bitstream:
    _, _, body = unframe(data, BITSTREAM_MAGIC, _describe_truncation)
    if len(body) < GLOBAL_HEADER.size:
        raise LengthError("body shorter than the global header")
    fields = GLOBAL_HEADER.unpack_from(body)
    header = StreamHeader(*fields[:-1])
    chunks = []
    pos = GLOBAL_HEADER.size
    for i in range(fields[-1]):
        if pos + CHUNK_HEAD.size > len(body):
            raise LengthError(f"chunk {i} header overruns the body")
        length, ftype, model_id, index, n_payloads = CHUNK_HEAD.unpack_from(body, pos)
        end = pos + 4 + length
        if end > len(body):
            raise LengthError(f"chunk {i} declares {length} bytes past the end of the body")
        p = pos + CHUNK_HEAD.size
        payloads = []
        for _ in range(n_payloads):
            if p + PAYLOAD_HEAD.size > end:
                raise LengthError(f"chunk {i} payload header overruns the chunk")
            kind, plen = PAYLOAD_HEAD.unpack_from(body, p)
            p += PAYLOAD_HEAD.size
            if p + plen > end:
                raise LengthError(f"chunk {i} payload overruns the chunk")
            payloads.append(Payload(kind, body[p:p + plen]))
            p += plen
        if p != end:
            raise LengthError(f"chunk {i} length prefix disagrees with its payloads")
        chunks.append(FrameChunk(ftype, model_id, index, tuple(payloads)))
        pos = end
    if pos != len(body):
        raise LengthError(f"{len(body) - pos} trailing bytes after the last chunk")
    return Bitstream(header, tuple(chunks))

"""Named float32 tensor store in the "EEVW" container.

Body layout (little-endian): ``count:u32`` then per entry
``name_len:u16 name:utf8 ndim:u8 dims:u32*ndim data:f32*prod(dims)``.
Framing (magic, version, length, CRC32) is shared with the bitstream.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from ..entropy.container import WEIGHTS_MAGIC, ContainerError, CrcError, frame, unframe
from ..tensor.nn import Module

__all__ = ["WeightStore", "WeightError", "MissingWeightError", "ShapeMismatchError", "CrcError",
           "save_weights", "load_weights"]


class WeightError(ValueError):
    pass


class MissingWeightError(WeightError, KeyError):
    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"missing weights: {', '.join(self.names)}")

    def __str__(self):
        return self.args[0]


class ShapeMismatchError(WeightError):
    pass


class WeightStore(dict):
    """Mapping name -> float32 array with byte serialization."""

    def __setitem__(self, name, value):
        super().__setitem__(str(name), np.asarray(value, dtype=np.float32))

    @classmethod
    def from_module(cls, module: Module) -> "WeightStore":
        store = cls()
        for name, arr in module.state_dict().items():
            store[name] = arr
        return store

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<I", len(self))]
        for name in sorted(self):
            arr = self[name]
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return frame(WEIGHTS_MAGIC, b"".join(parts))

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        _, _, body = unframe(data, WEIGHTS_MAGIC)
        store = cls()
        try:
            (count,) = struct.unpack_from("<I", body, 0)
            pos = 4
            for _ in range(count):
                (n,) = struct.unpack_from("<H", body, pos)
                pos += 2
                name = body[pos:pos + n].decode("utf-8")
                pos += n
                (ndim,) = struct.unpack_from("<B", body, pos)
                dims = struct.unpack_from(f"<{ndim}I", body, pos + 1)
                pos += 1 + 4 * ndim
                size = int(np.prod(dims, dtype=np.int64)) * 4
                if pos + size > len(body):
                    raise ContainerError(f"entry {name!r} overruns the weight file")
                if name in store:
                    raise ContainerError(f"duplicate weight name {name!r}")
                store[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(dims)
                pos += size
        except struct.error as exc:
            raise ContainerError(f"malformed weight file: {exc}") from exc
        if pos != len(body):
            raise ContainerError(f"{len(body) - pos} trailing bytes in weight file")
        return store

    def load_into(self, module: Module) -> None:
        """Validate every expected tensor against the module, then assign."""
        expected = module.shapes()
        missing = sorted(set(expected) - set(self))
        if missing:
            raise MissingWeightError(missing)
        for name, shape in expected.items():
            if self[name].shape != tuple(shape):
                raise ShapeMismatchError(f"{name}: architecture expects {tuple(shape)}, file has {self[name].shape}")
        module.load_state_dict({name: self[name] for name in expected})


def save_weights(store: Mapping) -> bytes:
    if isinstance(store, Module):
        store = WeightStore.from_module(store)
    elif not isinstance(store, WeightStore):
        ws = WeightStore()
        for k, v in store.items():
            ws[k] = v
        store = ws
    return store.to_bytes()


def load_weights(data: bytes, arch: Module) -> Module:
    WeightStore.from_bytes(data).load_into(arch)
    return arch

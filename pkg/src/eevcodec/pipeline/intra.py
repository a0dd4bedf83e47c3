"""Pluggable intra-frame coding.

``verbatim`` stores the frame as interleaved RGB8. ``external`` runs a
command template with ``{input.png}``, ``{output.bin}`` and ``{recon.png}``
placeholders and ingests the coded bytes and the reconstruction; decoding
needs a second template with ``{input.bin}`` and ``{recon.png}``.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

INTRA_VERBATIM = 0
INTRA_EXTERNAL = 1


class IntraBackendError(RuntimeError):
    pass


def to_rgb8(frame: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) floats in [0, 1] to (H, W, 3) uint8, round half up."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return q.transpose(1, 2, 0)


def from_rgb8(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 to (1, 3, H, W) float32 in [0, 1]."""
    return (np.asarray(img, dtype=np.float32).transpose(2, 0, 1)[None] / np.float32(255.0))


class VerbatimIntra:
    backend_id = INTRA_VERBATIM
    name = "verbatim"

    def code(self, frame: np.ndarray) -> tuple:
        """(payload, reconstruction (1, 3, H, W), bits)."""
        rgb = to_rgb8(frame)
        payload = rgb.tobytes()
        return payload, from_rgb8(rgb), 8 * len(payload)

    def decode(self, payload: bytes, height: int, width: int) -> np.ndarray:
        expected = height * width * 3
        if len(payload) != expected:
            raise IntraBackendError(f"verbatim intra payload has {len(payload)} bytes, expected {expected}")
        return from_rgb8(np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3))


def _run(template: str, paths: dict, timeout: float) -> None:
    cmd = template
    for key, path in paths.items():
        cmd = cmd.replace("{" + key + "}", shlex.quote(str(path)))
    try:
        proc = subprocess.run(cmd, shell=True, capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise IntraBackendError(f"intra command timed out after {timeout}s: {cmd}") from exc
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise IntraBackendError(f"intra command failed with exit status {proc.returncode}: {cmd}"
                                + (f"\n{err}" if err else ""))


def _read_png(path: Path, height: int, width: int) -> np.ndarray:
    if not path.exists():
        raise IntraBackendError(f"intra command did not write {path.name}")
    img = np.asarray(Image.open(path).convert("RGB"))
    if img.shape != (height, width, 3):
        raise IntraBackendError(f"reconstruction is {img.shape[1]}x{img.shape[0]}, expected {width}x{height}")
    return from_rgb8(img)


class ExternalIntra:
    backend_id = INTRA_EXTERNAL
    name = "external"

    def __init__(self, encode_cmd: str, decode_cmd: Optional[str] = None, timeout: float = 600.0):
        self.encode_cmd = encode_cmd
        self.decode_cmd = decode_cmd
        self.timeout = timeout

    def code(self, frame: np.ndarray) -> tuple:
        rgb = to_rgb8(frame)
        h, w = rgb.shape[:2]
        with tempfile.TemporaryDirectory(prefix="eev-intra-") as tmp:
            d = Path(tmp)
            Image.fromarray(rgb).save(d / "input.png")
            _run(self.encode_cmd, {"input.png": d / "input.png", "output.bin": d / "output.bin",
                                   "recon.png": d / "recon.png"}, self.timeout)
            if not (d / "output.bin").exists():
                raise IntraBackendError(f"intra command did not write output.bin: {self.encode_cmd}")
            payload = (d / "output.bin").read_bytes()
            recon = _read_png(d / "recon.png", h, w)
        return payload, recon, 8 * len(payload)

    def decode(self, payload: bytes, height: int, width: int) -> np.ndarray:
        if not self.decode_cmd:
            raise IntraBackendError("external intra decoding needs a decode command template")
        with tempfile.TemporaryDirectory(prefix="eev-intra-") as tmp:
            d = Path(tmp)
            (d / "input.bin").write_bytes(payload)
            _run(self.decode_cmd, {"input.bin": d / "input.bin", "recon.png": d / "recon.png"}, self.timeout)
            return _read_png(d / "recon.png", height, width)


def backend_for_id(backend_id: int, external: Optional[ExternalIntra] = None):
    if backend_id == INTRA_VERBATIM:
        return VerbatimIntra()
    if backend_id == INTRA_EXTERNAL:
        if external is None:
            raise IntraBackendError("stream uses the external intra backend; supply its decode command")
        return external
    raise IntraBackendError(f"unknown intra backend id {backend_id}")

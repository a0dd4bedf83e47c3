"""Video loading (raw RGB24, 8-bit YUV 4:2:0, image sequences) and writing.

Frames are centre-cropped to multiples of 64 on load so every model's
downsampling chain divides them evenly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

FORMATS = ("raw-rgb24", "yuv420", "image-sequence")
FORMAT_ALIASES = {"rgb24": "raw-rgb24", "raw": "raw-rgb24", "yuv420-8bit": "yuv420", "yuv": "yuv420",
                  "images": "image-sequence", "png": "image-sequence"}
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff", ".ppm")
ALIGN = 64


class VideoFormatError(ValueError):
    pass


@dataclass
class VideoClip:
    frames: list = field(default_factory=list)      # (H, W, 3) uint8 each
    width: int = 0
    height: int = 0
    frame_rate: float = 30.0
    name: str = ""
    class_label: str = ""

    def __len__(self) -> int:
        return len(self.frames)

    def planar(self) -> np.ndarray:
        """(T, 3, H, W) float32 in [0, 1]."""
        if not self.frames:
            return np.zeros((0, 3, self.height, self.width), np.float32)
        return (np.stack(self.frames).transpose(0, 3, 1, 2).astype(np.float32) / np.float32(255.0))


def normalize_format(fmt: str) -> str:
    f = FORMAT_ALIASES.get(fmt.lower(), fmt.lower())
    if f not in FORMATS:
        raise VideoFormatError(f"unknown video format {fmt!r}; expected one of {', '.join(FORMATS)}")
    return f


def crop_geometry(width: int, height: int, align: int = ALIGN) -> tuple:
    """(new_w, new_h, x_offset, y_offset) of the centred crop to multiples of ``align``."""
    if width < align or height < align:
        raise VideoFormatError(f"frames must be at least {align}x{align}, got {width}x{height}")
    nw, nh = width // align * align, height // align * align
    return nw, nh, (width - nw) // 2, (height - nh) // 2


def center_crop(frame: np.ndarray, align: int = ALIGN) -> np.ndarray:
    h, w = frame.shape[:2]
    nw, nh, ox, oy = crop_geometry(w, h, align)
    return frame[oy:oy + nh, ox:ox + nw]


def yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """BT.601 full-range conversion with nearest-neighbour chroma upsampling; uint8 (H, W, 3)."""
    h, w = y.shape
    uu = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    vv = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    yy = y.astype(np.float64)
    rgb = np.stack([yy + 1.402 * vv,
                    yy - 0.344136 * uu - 0.714136 * vv,
                    yy + 1.772 * uu], axis=-1)
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def _frames_from_bytes(data: bytes, frame_bytes: int, count: Optional[int], path: Path) -> int:
    if count is None:
        if len(data) % frame_bytes:
            raise VideoFormatError(f"{path}: {len(data)} bytes is not a whole number of "
                                   f"{frame_bytes}-byte frames")
        return len(data) // frame_bytes
    expected = count * frame_bytes
    if len(data) < expected:
        raise VideoFormatError(f"{path}: file too short for {count} frames: expected {expected} bytes, "
                               f"found {len(data)}")
    return count


def _image_files(path: Path) -> list:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    else:
        files = sorted(path.parent.glob(path.name))
    if not files:
        raise VideoFormatError(f"no images found at {path}")
    return files


def load_video(path, fmt: str, width: Optional[int] = None, height: Optional[int] = None,
               count: Optional[int] = None, name: Optional[str] = None, class_label: str = "",
               frame_rate: float = 30.0) -> VideoClip:
    """Read ``count`` frames (all if None) and centre-crop them to multiples of 64."""
    path = Path(path)
    fmt = normalize_format(fmt)
    frames = []
    if fmt == "image-sequence":
        files = _image_files(path)
        if count is not None:
            if len(files) < count:
                raise VideoFormatError(f"{path}: expected {count} images, found {len(files)}")
            files = files[:count]
        for f in files:
            img = np.asarray(Image.open(f).convert("RGB"))
            if width is not None and height is not None and img.shape[:2] != (height, width):
                raise VideoFormatError(f"{f}: image is {img.shape[1]}x{img.shape[0]}, expected {width}x{height}")
            if frames and img.shape != frames[0].shape:
                raise VideoFormatError(f"{f}: image size differs from the first frame")
            frames.append(img)
        height, width = frames[0].shape[:2]
    else:
        if width is None or height is None:
            raise VideoFormatError(f"{fmt} input needs explicit width and height")
        crop_geometry(width, height)
        data = path.read_bytes()
        if fmt == "raw-rgb24":
            fb = width * height * 3
            n = _frames_from_bytes(data, fb, count, path)
            arr = np.frombuffer(data, np.uint8, count=n * fb).reshape(n, height, width, 3)
            frames = list(arr)
        else:
            if width % 2 or height % 2:
                raise VideoFormatError(f"yuv420 needs even dimensions, got {width}x{height}")
            ys, cs = width * height, (width // 2) * (height // 2)
            fb = ys + 2 * cs
            n = _frames_from_bytes(data, fb, count, path)
            for i in range(n):
                base = i * fb
                y = np.frombuffer(data, np.uint8, ys, base).reshape(height, width)
                u = np.frombuffer(data, np.uint8, cs, base + ys).reshape(height // 2, width // 2)
                v = np.frombuffer(data, np.uint8, cs, base + ys + cs).reshape(height // 2, width // 2)
                frames.append(yuv420_to_rgb(y, u, v))
    nw, nh, ox, oy = crop_geometry(width, height)
    frames = [np.ascontiguousarray(f[oy:oy + nh, ox:ox + nw]) for f in frames]
    return VideoClip(frames, nw, nh, frame_rate, name or path.stem, class_label)


def write_raw_rgb24(frames, path) -> None:
    """Concatenate frames (uint8 HWC or float planar in [0, 1]) into one RGB24 file."""
    Path(path).write_bytes(b"".join(as_rgb8(f).tobytes() for f in frames))


def write_image_sequence(frames, directory, prefix: str = "frame") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = d / f"{prefix}_{i:05d}.png"
        Image.fromarray(as_rgb8(f)).save(p)
        paths.append(p)
    return paths


def as_rgb8(frame) -> np.ndarray:
    """(H, W, 3) uint8 from uint8 HWC or float planar (3, H, W) / (1, 3, H, W) in [0, 1]."""
    arr = np.asarray(frame)
    if arr.dtype == np.uint8 and arr.ndim == 3 and arr.shape[-1] == 3:
        return arr
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise VideoFormatError(f"cannot interpret frame of shape {arr.shape}")
    q = np.floor(np.clip(arr.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return q.transpose(1, 2, 0)

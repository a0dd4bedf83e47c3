"""RGB-PSNR and MS-SSIM on channel-last images.

Images are (H, W, 3) arrays on a common scale (uint8 with peak 255, or
floats with an explicit peak / data range).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
LUMA = np.array([0.299, 0.587, 0.114])


def _pair(a, b) -> tuple:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr_rgb(a, b, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE) over all samples jointly, capped at 100 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def _gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable correlation over the last two axes without padding."""
    h = correlate1d(img, win, axis=-2, mode="constant")
    h = correlate1d(h, win, axis=-1, mode="constant")
    r = len(win) // 2
    return h[..., r:h.shape[-2] - r, r:h.shape[-1] - r]


def _ssim_cs(x: np.ndarray, y: np.ndarray, win: np.ndarray, data_range: float) -> tuple:
    """Per-channel mean SSIM and contrast-structure terms; x, y are (C, H, W)."""
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu1 = _filter_valid(x, win)
    mu2 = _filter_valid(y, win)
    s11 = _filter_valid(x * x, win) - mu1 ** 2
    s22 = _filter_valid(y * y, win) - mu2 ** 2
    s12 = _filter_valid(x * y, win) - mu1 * mu2
    cs_map = (2 * s12 + c2) / (s11 + s22 + c2)
    ssim_map = ((2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)) * cs_map
    return ssim_map.mean(axis=(-2, -1)), cs_map.mean(axis=(-2, -1))


def _pool2(x: np.ndarray) -> np.ndarray:
    """2x2 mean pool; odd dims get one zero sample on each side, counted in the mean."""
    ph, pw = x.shape[-2] % 2, x.shape[-1] % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[:, :h, :w]
    return 0.25 * (x[:, 0::2, 0::2] + x[:, 1::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 1::2])


def ms_ssim_scales(height: int, width: int) -> int:
    """Largest scale count (at most 5) whose coarsest image still fits the window."""
    side = min(height, width)
    if side < WINDOW:
        raise ValueError(f"MS-SSIM needs images of at least {WINDOW}x{WINDOW}, got {width}x{height}")
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS) and side >= WINDOW * 2 ** scales:
        scales += 1
    return scales


def ms_ssim(a, b, data_range: float = 255.0, mode: str = "rgb") -> float:
    """Multi-scale SSIM.

    ``mode="rgb"`` averages the per-channel scores; ``mode="luma"`` scores
    BT.601 luma. Images smaller than 176 pixels on a side use fewer scales
    with the leading weights renormalized to sum to one.
    """
    a, b = _pair(a, b)
    if a.ndim != 3 or a.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) images, got {a.shape}")
    if mode == "rgb":
        x, y = a.transpose(2, 0, 1), b.transpose(2, 0, 1)
    elif mode == "luma":
        x, y = (a @ LUMA)[None], (b @ LUMA)[None]
    else:
        raise ValueError(f"unknown MS-SSIM mode {mode!r}")
    scales = ms_ssim_scales(*x.shape[1:])
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    win = _gaussian_window()
    factors = []
    for i in range(scales):
        ssim, cs = _ssim_cs(x, y, win, data_range)
        if i < scales - 1:
            factors.append(np.maximum(cs, 0.0))
            x, y = _pool2(x), _pool2(y)
    factors.append(np.maximum(ssim, 0.0))
    stacked = np.stack(factors)                       # (scales, C)
    per_channel = np.prod(stacked ** weights[:, None], axis=0)
    return float(per_channel.mean())


def to_hwc(frame) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) planar array to (H, W, 3)."""
    arr = np.asarray(frame)
    if arr.ndim == 4:
        arr = arr[0]
    return arr.transpose(1, 2, 0)

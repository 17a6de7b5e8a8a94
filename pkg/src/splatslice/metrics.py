"""PSNR and SSIM between rendered frames.

Both metrics ignore the alpha channel. SSIM uses the standard
parameterization: 11x11 Gaussian window with sigma 1.5, K1=0.01, K2=0.03,
L=255, computed on Rec.601 luma over fully-valid windows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError
from .frames import FrameImage

PSNR_CAP_DB = 99.0

_WIN = 11
_SIGMA = 1.5
_K1, _K2, _L = 0.01, 0.03, 255.0


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _rgb(image) -> np.ndarray:
    px = image.pixels if isinstance(image, FrameImage) else np.asarray(image)
    if px.ndim != 3 or px.shape[2] not in (3, 4):
        raise InvalidArgumentError(f"expected an (H, W, 3|4) image, got shape {px.shape}")
    return px[:, :, :3].astype(np.float64)


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image dimensions differ: {a.shape[:2]} vs {b.shape[:2]}")


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical images report the 99 dB cap."""
    x, y = _rgb(a), _rgb(b)
    _check_dims(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 20.0 * np.log10(255.0) - 10.0 * np.log10(mse)


def _gaussian_kernel() -> np.ndarray:
    t = np.arange(_WIN) - (_WIN - 1) / 2.0
    k = np.exp(-(t * t) / (2.0 * _SIGMA * _SIGMA))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable windowed mean, valid region only."""
    t = sliding_window_view(img, _WIN, axis=1) @ kernel
    return sliding_window_view(t, _WIN, axis=0) @ kernel


def _luma(px: np.ndarray) -> np.ndarray:
    return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


def ssim(a, b) -> float:
    """Structural similarity index on Rec.601 luma."""
    x, y = _rgb(a), _rgb(b)
    _check_dims(x, y)
    h, w = x.shape[:2]
    if min(h, w) < _WIN:
        raise InvalidArgumentError(f"images must be at least {_WIN}x{_WIN}, got {w}x{h}")
    lx, ly = _luma(x), _luma(y)
    k = _gaussian_kernel()
    c1 = (_K1 * _L) ** 2
    c2 = (_K2 * _L) ** 2
    mu_x = _filter_valid(lx, k)
    mu_y = _filter_valid(ly, k)
    var_x = _filter_valid(lx * lx, k) - mu_x * mu_x
    var_y = _filter_valid(ly * ly, k) - mu_y * mu_y
    cov_xy = _filter_valid(lx * ly, k) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def compare(a, b) -> MetricReport:
    return MetricReport(psnr_db=psnr(a, b), ssim=ssim(a, b))

"""PSNR, salient-region PSNR, SSIM and MS-SSIM for 8-bit images."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.ndimage import correlate1d

PEAK = 255.0
INF = math.inf  # PSNR of identical images
NA = None  # metric undefined for this pair (e.g. empty salient region)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIDE = SSIM_WINDOW * 2 ** (len(MS_SSIM_WEIGHTS) - 1)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def _psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return INF
    return 10.0 * math.log10(PEAK * PEAK / mse)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(255^2 / MSE) over every sample of every channel; ``INF`` if identical."""
    a, b = _check_pair(a, b)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)))


def psnr_s(a: np.ndarray, b: np.ndarray, saliency: np.ndarray, cutoff: float = 0.5) -> float | None:
    """PSNR over pixels whose saliency exceeds ``cutoff``; ``NA`` when none do."""
    a, b = _check_pair(a, b)
    saliency = np.asarray(saliency)
    if saliency.shape != a.shape[:2]:
        raise ValueError(f"saliency map shape {saliency.shape} does not match image shape {a.shape[:2]}")
    mask = saliency > cutoff
    if not mask.any():
        return NA
    return _psnr_from_mse(float(np.mean((a[mask] - b[mask]) ** 2)))


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def _gaussian(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _ssim_terms(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window (luminance * contrast-structure, contrast-structure) maps."""
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    if min(x.shape) < SSIM_WINDOW:
        # too small for a sliding window: one global window
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = ((x - mx) * (y - my)).mean()
        cs = (2 * cov + c2) / (vx + vy + c2)
        return np.array([(2 * mx * my + c1) / (mx * mx + my * my + c1) * cs]), np.array([cs])
    g = _gaussian()
    r = SSIM_WINDOW // 2

    def blur(img):
        out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return out[r:-r, r:-r]

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cov = blur(x * y) - mx * my
    cs = (2 * cov + c2) / (vx + vy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return lum * cs, cs


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of the BT.601 luma planes (11x11 Gaussian, sigma 1.5)."""
    a, b = _check_pair(a, b)
    if np.array_equal(a, b):
        return 1.0
    full, _ = _ssim_terms(luma(a), luma(b))
    return float(full.mean())


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[:h - h % 2, :w - w % 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Five-scale MS-SSIM with the standard exponents; needs both sides >= 176."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < MS_SSIM_MIN_SIDE:
        raise ValueError(f"MS-SSIM needs images at least {MS_SSIM_MIN_SIDE} px on each side, got {a.shape[:2]}")
    if np.array_equal(a, b):
        return 1.0
    x, y = luma(a), luma(b)
    result = 1.0
    last = len(MS_SSIM_WEIGHTS) - 1
    for scale, weight in enumerate(MS_SSIM_WEIGHTS):
        full, cs = _ssim_terms(x, y)
        value = full.mean() if scale == last else cs.mean()
        # negative correlation has no fractional power; treat as no similarity
        result *= max(float(value), 0.0) ** weight
        if scale != last:
            x, y = _halve(x), _halve(y)
    return float(result)


@dataclass
class MetricsReport:
    id: str
    bytes: int | None
    psnr: float | None
    psnr_s: float | None
    ssim: float | None
    msssim: float | None

    COLUMNS = ("id", "bytes", "psnr", "psnr_s", "ssim", "msssim")

    def row(self) -> list[str]:
        return [format_value(getattr(self, name)) for name in self.COLUMNS]


def format_value(value) -> str:
    if value is None:
        return "na"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.6f}"
    return str(value)


def parse_value(text: str):
    if text == "na":
        return None
    if text == "inf":
        return INF
    return float(text)


def measure(image_id: str, reference: np.ndarray, candidate: np.ndarray, size: int | None = None,
            saliency: np.ndarray | None = None, cutoff: float = 0.5) -> MetricsReport:
    """All metrics for one pair; MS-SSIM is ``NA`` for images too small for five scales."""
    reference = np.asarray(reference)
    candidate = np.asarray(candidate)
    if reference.shape != candidate.shape:
        raise ValueError(f"decoded size {candidate.shape} differs from reference {reference.shape}")
    ms = ms_ssim(reference, candidate) if min(reference.shape[:2]) >= MS_SSIM_MIN_SIDE else NA
    ps = psnr_s(reference, candidate, saliency, cutoff) if saliency is not None else NA
    return MetricsReport(image_id, size, psnr(reference, candidate), ps, ssim(reference, candidate), ms)


def reports_to_csv(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MetricsReport.COLUMNS)
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


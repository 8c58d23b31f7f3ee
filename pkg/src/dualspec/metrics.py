"""Spatial-domain quality metrics for (H, W, C) cubes with data range 1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


class Region(NamedTuple):
    top: int
    left: int
    height: int
    width: int


@dataclass
class MetricReport:
    psnr_db: float | None = None
    ssim: float | None = None
    lfd: float | None = None
    spectral_correlations: list[float | None] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {}
        for key, value in (("psnr", self.psnr_db), ("ssim", self.ssim), ("lfd", self.lfd)):
            if value is not None:
                out[key] = value
        if self.spectral_correlations:
            out["spectral_correlations"] = self.spectral_correlations
        return out


def _pair(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ContractError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    if gt.ndim == 2:
        gt, pred = gt[:, :, None], pred[:, :, None]
    if gt.ndim != 3:
        raise ContractError(f"expected (H, W, C) cubes, got shape {gt.shape}")
    return gt, pred


def psnr(gt, pred) -> float:
    """Mean over channels of per-channel PSNR in dB, each capped at 100."""
    gt, pred = _pair(gt, pred)
    mse = ((gt - pred) ** 2).mean(axis=(0, 1))
    with np.errstate(divide="ignore"):
        per_channel = np.where(mse > 0, -10.0 * np.log10(mse), PSNR_CAP)
    return float(np.minimum(per_channel, PSNR_CAP).mean())


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable weighted average over every fully-contained window
    k = g.size
    rows = sliding_window_view(img, k, axis=1) @ g
    return sliding_window_view(rows, k, axis=0) @ g


def ssim(gt, pred) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window, averaged over windows and channels."""
    gt, pred = _pair(gt, pred)
    h, w, c = gt.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ContractError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")
    g = gaussian_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    scores = []
    for k in range(c):
        x, y = gt[:, :, k], pred[:, :, k]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append((num / den).mean())
    return float(np.mean(scores))


def spectral_correlation(gt, pred, region: Region | tuple[int, int, int, int]) -> float | None:
    """Pearson correlation of the region-averaged spectra; None when either is flat."""
    gt, pred = _pair(gt, pred)
    top, left, height, width = region
    if height < 1 or width < 1 or top < 0 or left < 0 or top + height > gt.shape[0] or left + width > gt.shape[1]:
        raise ContractError(f"region {tuple(region)} is outside a {gt.shape[0]}x{gt.shape[1]} image")
    window = (slice(top, top + height), slice(left, left + width))
    a = gt[window].mean(axis=(0, 1))
    b = pred[window].mean(axis=(0, 1))
    a, b = a - a.mean(), b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return None
    return float((a * b).sum() / denom)

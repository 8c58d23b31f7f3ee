"""Frequency-domain loss and metrics.

The 2D DFT is unnormalized and applied over the last two axes, one axis at
a time. Power-of-two lengths use a recursive radix-2 split; other lengths
multiply by an explicit twiddle matrix.

Loss functions take channel-first ``(C, H, W)`` arrays (the network layout);
``lfd`` and ``spectrum_image`` take ``(H, W, C)`` cubes like the metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, make_op
from .errors import ConfigError, ContractError

_dft_calls = 0


def dft_call_count() -> int:
    """Number of dft2 evaluations since import (or the last reset)."""
    return _dft_calls


def reset_dft_call_count() -> None:
    global _dft_calls
    _dft_calls = 0


@dataclass(frozen=True)
class FdlConfig:
    alpha: float = 2.0
    lam: float = 0.7
    patches: int = 3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.patches < 1:
            raise ConfigError(f"patches must be >= 1, got {self.patches}")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _twiddle_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    # reduce k*m mod n before scaling so large products keep full precision
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)


@lru_cache(maxsize=64)
def _half_twiddles(n: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(n // 2) / n)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _dft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if _is_pow2(n) and n > 8:
        even = _dft_last(x[..., 0::2])
        odd = _dft_last(x[..., 1::2]) * _half_twiddles(n)
        return np.concatenate([even + odd, even - odd], axis=-1)
    return x @ _twiddle_matrix(n)  # symmetric, so no transpose needed


def dft1(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized 1D DFT along ``axis``."""
    x = np.asarray(x, dtype=np.complex128)
    return np.moveaxis(_dft_last(np.moveaxis(x, axis, -1)), -1, axis)


def dft2(img: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes (rows, then columns)."""
    global _dft_calls
    _dft_calls += 1
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ContractError(f"dft2 needs at least a 2D array, got shape {img.shape}")
    return dft1(dft1(img, axis=-1), axis=-2)


def _dft2_adjoint(spec: np.ndarray) -> np.ndarray:
    # A^H g = conj(A conj(g)) for the DFT matrix A
    return np.conj(dft2(np.conj(spec)))


# ---------------------------------------------------------------------------
# distances and weights
# ---------------------------------------------------------------------------


def freq_distance(f_gt: np.ndarray, f_pred: np.ndarray, alpha: float) -> np.ndarray:
    if f_gt.shape != f_pred.shape:
        raise ContractError(f"spectrum shapes differ: {f_gt.shape} vs {f_pred.shape}")
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    return np.abs(f_gt - f_pred) ** alpha


def dynamic_weights(d: np.ndarray) -> np.ndarray:
    """sqrt(d) scaled so the largest bin of each (H, W) map is 1.

    A map that is zero everywhere gets zero weights.
    """
    d = np.asarray(d, dtype=np.float64)
    if (d < 0).any():
        raise ContractError("distances must be non-negative")
    root = np.sqrt(d)
    peak = root.max(axis=(-2, -1), keepdims=True)
    return np.divide(root, peak, out=np.zeros_like(root), where=peak > 0)


def _to_patches(x: np.ndarray, p: int) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, p, h // p, p, w // p).transpose(0, 1, 3, 2, 4).reshape(c * p * p, h // p, w // p)


def _from_patches(x: np.ndarray, c: int, h: int, w: int, p: int) -> np.ndarray:
    return x.reshape(c, p, p, h // p, w // p).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def _check_pair(y_gt: np.ndarray, y_pred: Tensor) -> None:
    if y_gt.shape != y_pred.shape:
        raise ContractError(f"ground truth {y_gt.shape} and prediction {y_pred.shape} differ in shape")
    if y_pred.ndim != 3:
        raise ContractError(f"expected a (C, H, W) cube, got shape {y_pred.shape}")


def _spectral_diff(y_gt: np.ndarray, y_pred: np.ndarray, p: int) -> np.ndarray:
    c, h, w = y_pred.shape
    if h % p or w % p:
        raise ConfigError(
            f"{h}x{w} is not divisible into a {p}x{p} grid; center-crop to {h - h % p}x{w - w % p} first"
        )
    gt = np.asarray(y_gt, dtype=np.float64)
    pred = np.asarray(y_pred, dtype=np.float64)
    if p > 1:
        gt, pred = _to_patches(gt, p), _to_patches(pred, p)
    return dft2(gt) - dft2(pred)


def fdl_weights(y_gt: np.ndarray, y_pred: np.ndarray, alpha: float = 2.0, p: int = 1) -> np.ndarray:
    """The dynamic weights the loss would use at this prediction.

    Passing them back via ``weights=`` freezes them, which lets a
    finite-difference check see the same function that backprop differentiates.
    """
    if np.shape(y_gt) != np.shape(y_pred):
        raise ContractError(f"ground truth {np.shape(y_gt)} and prediction {np.shape(y_pred)} differ in shape")
    return dynamic_weights(np.abs(_spectral_diff(y_gt, y_pred, p)) ** alpha)


def _fdl(y_gt: np.ndarray, y_pred: Tensor, alpha: float, p: int, weights: np.ndarray | None) -> Tensor:
    _check_pair(y_gt, y_pred)
    if alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    c, h, w = y_pred.shape
    diff = _spectral_diff(y_gt, y_pred.data, p)
    ph, pw = diff.shape[-2:]
    mod = np.abs(diff)
    dist = mod**alpha
    if weights is None:
        theta = dynamic_weights(dist)
    else:
        theta = np.asarray(weights, dtype=np.float64)
        if theta.shape != dist.shape:
            raise ContractError(f"weights shape {theta.shape} does not match {dist.shape}")
    scale = 1.0 / (ph * pw * p * p)
    loss = float((theta * dist).sum() * scale)

    def _bw(g):
        # d|D|^a / dD = a |D|^(a-2) D, zero where D vanishes
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(mod > 0, alpha * mod ** (alpha - 2.0), 0.0)
        g_diff = float(g) * scale * theta * radial * diff
        g_pred = -np.real(_dft2_adjoint(g_diff))
        if p > 1:
            g_pred = _from_patches(g_pred, c, h, w, p)
        y_pred._accumulate(g_pred.astype(y_pred.data.dtype))

    return make_op(np.asarray(loss, dtype=y_pred.data.dtype), (y_pred,), _bw)


def fdl_loss(y_gt: np.ndarray, y_pred: Tensor, alpha: float = 2.0, weights: np.ndarray | None = None) -> Tensor:
    """Dynamically weighted spectral distance summed over channels.

    Per channel, each frequency bin's distance ``|F_gt - F_pred|**alpha`` is
    weighted by :func:`dynamic_weights` and averaged over the H*W bins. The
    weights are frozen: no gradient flows through them.
    """
    return _fdl(y_gt, y_pred, alpha, 1, weights)


def patch_fdl_loss(
    y_gt: np.ndarray, y_pred: Tensor, alpha: float = 2.0, p: int = 3, weights: np.ndarray | None = None
) -> Tensor:
    """:func:`fdl_loss` on a p-by-p grid of patches, averaged over patches.

    H and W must both be divisible by ``p``.
    """
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    return _fdl(y_gt, y_pred, alpha, p, weights)


# ---------------------------------------------------------------------------
# metrics and rendering on (H, W, C) cubes
# ---------------------------------------------------------------------------


def lfd(y_gt: np.ndarray, y_pred: np.ndarray) -> float:
    """Log frequency distance, averaged over channels (natural log)."""
    y_gt = np.asarray(y_gt, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_gt.shape != y_pred.shape or y_gt.ndim != 3:
        raise ContractError(f"lfd needs two equal (H, W, C) cubes, got {y_gt.shape} and {y_pred.shape}")
    h, w, _ = y_gt.shape
    d = freq_distance(dft2(np.moveaxis(y_gt, -1, 0)), dft2(np.moveaxis(y_pred, -1, 0)), 2.0)
    per_channel = np.log(d.sum(axis=(1, 2)) / (h * w) + 1.0)
    return float(per_channel.mean())


def spectrum_image(cube: np.ndarray, channel: int) -> np.ndarray:
    """Centered log-magnitude spectrum of one band as an 8-bit image."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3:
        raise ContractError(f"expected an (H, W, C) cube, got shape {cube.shape}")
    if not 0 <= channel < cube.shape[2]:
        raise ContractError(f"channel {channel} out of range for {cube.shape[2]} bands")
    mag = np.log1p(np.abs(dft2(cube[:, :, channel])))
    mag = np.fft.fftshift(mag)
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.rint((mag - lo) / (hi - lo) * 255.0).astype(np.uint8)

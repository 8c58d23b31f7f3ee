"""CASSI forward model.

Cubes are ``(H, W, C)`` arrays, masks ``(H, W)``, and measurements
``(H, W + step*(C-1))``. Band ``n`` is displaced by ``step*n`` columns, so
channel 0 is the reference wavelength.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError


def as_cube(values) -> np.ndarray:
    """Validate a hyperspectral cube and clamp it into [0, 1]."""
    cube = np.asarray(values, dtype=np.float64)
    if cube.ndim != 3 or min(cube.shape) < 1:
        raise ContractError(f"cube must be a non-empty (H, W, C) array, got shape {cube.shape}")
    if not np.isfinite(cube).all():
        raise ContractError("cube contains non-finite values")
    return np.clip(cube, 0.0, 1.0)


def as_mask(values, shape: tuple[int, int] | None = None) -> np.ndarray:
    mask = np.asarray(values, dtype=np.float64)
    if mask.ndim == 3 and mask.shape[2] == 1:
        mask = mask[:, :, 0]
    if mask.ndim != 2:
        raise ContractError(f"mask must be (H, W), got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise ConfigError(f"mask is {mask.shape[0]}x{mask.shape[1]} but cube is {shape[0]}x{shape[1]}")
    if not np.isfinite(mask).all():
        raise ContractError("mask contains non-finite values")
    if not mask.any():
        raise ContractError("mask is identically zero")
    return np.clip(mask, 0.0, 1.0)


def measurement_width(width: int, channels: int, step: int) -> int:
    return width + step * (channels - 1)


def simulate_measurement(cube: np.ndarray, mask: np.ndarray, step: int) -> np.ndarray:
    """Modulate every band by the mask, shear band n by ``step*n`` columns, and sum."""
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    h, w, c = cube.shape
    if mask.shape != (h, w):
        raise ConfigError(f"mask is {mask.shape[0]}x{mask.shape[1]} but cube is {h}x{w}")
    out = np.zeros((h, measurement_width(w, c, step)), dtype=np.result_type(cube, mask))
    coded = cube * mask[:, :, None]
    for n in range(c):
        out[:, step * n : step * n + w] += coded[:, :, n]
    return out


def infer_step(meas_width: int, width: int, channels: int) -> int:
    """Recover the dispersion step from measurement and scene widths."""
    extra = meas_width - width
    if extra < 0:
        raise ConfigError(f"measurement width {meas_width} is narrower than scene width {width}")
    if channels == 1:
        if extra:
            raise ConfigError("single-band measurement must match the scene width")
        return 0
    if extra % (channels - 1):
        raise ConfigError(f"width excess {extra} is not divisible by channels-1 = {channels - 1}")
    return extra // (channels - 1)


def shift_back(meas: np.ndarray, step: int, channels: int) -> np.ndarray:
    """Crop the measurement at per-band offsets into an (H, W, C) stack."""
    if meas.ndim != 2:
        raise ContractError(f"measurement must be 2D, got shape {meas.shape}")
    if step < 0 or channels < 1:
        raise ConfigError(f"invalid step={step} or channels={channels}")
    h, wm = meas.shape
    w = wm - step * (channels - 1)
    if w < 1:
        raise ConfigError(f"measurement width {wm} too small for {channels} bands at step {step}")
    out = np.empty((h, w, channels), dtype=meas.dtype)
    for n in range(channels):
        out[:, :, n] = meas[:, step * n : step * n + w]
    return out


def form_network_input(yshift: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if yshift.ndim != 3 or yshift.shape[:2] != mask.shape:
        raise ConfigError(f"shifted stack {yshift.shape} does not match mask {mask.shape}")
    return yshift * mask[:, :, None]


def inject_shot_noise(meas: np.ndarray, bits: int, seed: int) -> np.ndarray:
    """Poisson noise at a photon budget of ``2**bits - 1`` for the brightest pixel."""
    if bits < 1:
        raise ConfigError(f"bits must be >= 1, got {bits}")
    if (meas < 0).any():
        raise ContractError("shot noise needs a non-negative measurement")
    peak = float(meas.max()) if meas.size else 0.0
    if peak == 0.0:
        return np.zeros_like(meas)
    scale = (2**bits - 1) / peak
    rng = np.random.default_rng(seed)
    return (rng.poisson(meas * scale) / scale).astype(meas.dtype)

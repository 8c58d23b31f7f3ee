"""Seeded synthetic scenes and masks for desk-scale experiments."""

from __future__ import annotations

import numpy as np


def smooth_cube(height: int, width: int, channels: int, seed: int = 0, modes: int = 6, max_freq: int = 3) -> np.ndarray:
    """Sum of random low-frequency plane waves whose amplitudes drift smoothly across bands.

    Values are rescaled into [0.05, 0.95].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(height) / height, np.arange(width) / width, indexing="ij")
    bands = np.linspace(0.0, 1.0, channels)
    cube = np.zeros((height, width, channels))
    for _ in range(modes):
        ky, kx = rng.integers(-max_freq, max_freq + 1, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * (ky * yy + kx * xx) + phase)
        # amplitude is a random line over the band axis
        amp = rng.normal() + rng.normal() * bands
        cube += wave[:, :, None] * amp[None, None, :]
    cube -= cube.min()
    peak = cube.max()
    if peak > 0:
        cube /= peak
    return 0.05 + 0.9 * cube


def random_mask(height: int, width: int, seed: int = 0, fill: float = 0.5) -> np.ndarray:
    """Binary coded aperture with roughly ``fill`` open pixels."""
    rng = np.random.default_rng(seed)
    mask = (rng.random((height, width)) < fill).astype(np.float64)
    if not mask.any():
        mask[0, 0] = 1.0
    return mask

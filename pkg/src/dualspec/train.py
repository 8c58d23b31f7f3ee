"""Dual-domain training loop for HDNet."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import cassi, freq
from .autodiff import ParamStore, Tensor
from .errors import ConfigError, ContractError, NumericError
from .network import NetConfig, hdnet_forward, init_params

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l1", "fdl", "total", "lr")


@dataclass
class TrainConfig:
    patch_size: int = 32
    batch_size: int = 1
    steps: int = 500
    lr0: float = 4e-4
    halve_every_epochs: int = 50
    steps_per_epoch: int = 1
    lam: float = 0.7
    alpha: float = 2.0
    patches: int = 3
    use_patch_fdl: bool = False
    step: int = 2
    augment: bool = True
    shot_noise_bits: int | None = None
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.patch_size < 11:
            raise ConfigError(f"patch_size must be >= 11 (SSIM window), got {self.patch_size}")
        if self.batch_size < 1 or self.steps < 0 or self.steps_per_epoch < 1 or self.halve_every_epochs < 1:
            raise ConfigError("batch_size, steps_per_epoch and halve_every_epochs must be positive, steps >= 0")
        if self.lam < 0 or self.alpha <= 0 or self.patches < 1:
            raise ConfigError("need lam >= 0, alpha > 0, patches >= 1")
        if self.step < 0:
            raise ConfigError(f"dispersion step must be >= 0, got {self.step}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def desk_overfit(cls, **overrides) -> "TrainConfig":
        """Memorize one 32x32 sample in 500 steps.

        A single fixed sample has no use for augmentation, and the learning
        rate is raised because the run is 500 steps rather than hundreds of epochs.
        Patch FDL on an 8x8 grid keeps the frequency term balanced against L1.
        """
        base = dict(
            patch_size=32,
            steps=500,
            lr0=8e-3,
            halve_every_epochs=1000,
            lam=0.7,
            use_patch_fdl=True,
            patches=8,
            augment=False,
            seed=0,
        )
        base.update(overrides)
        return cls(**base)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def total_loss(
    y_gt: np.ndarray, y_pred: Tensor, cfg: TrainConfig, fdl_weights: np.ndarray | None = None
) -> tuple[Tensor, float, float]:
    """Mean absolute error plus ``lam`` times the (optionally patch-based) FDL.

    Cubes are channel-first. Returns the loss tensor and its two terms as
    floats; with ``lam == 0`` the frequency term is skipped entirely.
    """
    if y_gt.shape != y_pred.shape:
        raise ContractError(f"ground truth {y_gt.shape} and prediction {y_pred.shape} differ in shape")
    target = Tensor(np.asarray(y_gt, dtype=y_pred.data.dtype))
    l1 = ad.mean_all(ad.absolute(ad.sub(y_pred, target)))
    if cfg.lam == 0:
        return l1, l1.item(), 0.0
    p = cfg.patches if cfg.use_patch_fdl else 1
    fdl = freq.patch_fdl_loss(y_gt, y_pred, cfg.alpha, p, weights=fdl_weights)
    return l1 + fdl * cfg.lam, l1.item(), fdl.item()


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

FLIPS = ("none", "h", "v")


def dihedral(cube: np.ndarray, flip: str, quarter_turns: int) -> np.ndarray:
    """Flip (h = mirror columns, v = mirror rows), then rotate counter-clockwise in 90 degree steps."""
    if flip == "h":
        cube = cube[:, ::-1]
    elif flip == "v":
        cube = cube[::-1]
    elif flip != "none":
        raise ConfigError(f"unknown flip {flip!r}")
    return np.ascontiguousarray(np.rot90(cube, k=quarter_turns, axes=(0, 1)))


def augment(cube: np.ndarray, rng: np.random.Generator | int) -> np.ndarray:
    """Random flip in {none, h, v} and rotation in {0, 90, 180, 270}.

    Non-square patches only rotate by 0 or 180 degrees.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    flip = FLIPS[int(rng.integers(3))]
    turns = int(rng.integers(4))
    if cube.shape[0] != cube.shape[1]:
        turns = 2 * (turns % 2)
    return dihedral(cube, flip, turns)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from the gradients stored on ``params``.

    Nothing is modified if any gradient is non-finite.
    """
    for name, t in params.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}; step rejected")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        t.data = t.data - (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(t.data.dtype)


def lr_schedule(epoch: float, lr0: float = 4e-4, halve_every: int = 50) -> float:
    """Linear ramps that each end at half their starting value, chained."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    span, within = divmod(epoch, halve_every)
    start = lr0 * 0.5 ** int(span)
    return start * (1.0 - 0.5 * within / halve_every)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def network_input(meas: np.ndarray, mask: np.ndarray, channels: int) -> np.ndarray:
    """Shift back and mask a measurement; returns a channel-first (C, H, W) array."""
    step = cassi.infer_step(meas.shape[1], mask.shape[1], channels)
    x = cassi.form_network_input(cassi.shift_back(meas, step, channels), mask)
    return np.ascontiguousarray(np.moveaxis(x, -1, 0))


def reconstruct(meas: np.ndarray, mask: np.ndarray, params: ParamStore, config: NetConfig) -> np.ndarray:
    """Measurement to an (H, W, C) cube clamped to [0, 1]."""
    if meas.shape[0] != mask.shape[0]:
        raise ConfigError(f"measurement has {meas.shape[0]} rows but mask has {mask.shape[0]}")
    dtype = next(iter(params.values())).data.dtype if len(params) else np.float64
    x = Tensor(network_input(meas, mask, config.in_channels).astype(dtype))
    out = hdnet_forward(x, params, config).data
    return np.clip(np.moveaxis(out, 0, -1), 0.0, 1.0).astype(np.float64)


@dataclass
class TrainResult:
    params: ParamStore
    log: list[dict]


def _sample_patch(cubes: Sequence[np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
    cube = cubes[int(rng.integers(len(cubes)))]
    h, w = cube.shape[:2]
    top = int(rng.integers(h - size + 1))
    left = int(rng.integers(w - size + 1))
    return cube[top : top + size, left : left + size]


def train(
    cubes: Sequence[np.ndarray],
    mask: np.ndarray,
    cfg: TrainConfig,
    net: NetConfig,
    params: ParamStore | None = None,
) -> TrainResult:
    """Optimize HDNet on random crops of ``cubes`` seen through ``mask``.

    The mask's top-left ``patch_size`` square is used for every sample.
    Identical inputs and ``cfg.seed`` give bit-identical logs and weights.
    """
    size = cfg.patch_size
    usable = [np.asarray(c, dtype=np.float64) for c in cubes if c.shape[0] >= size and c.shape[1] >= size]
    if not usable:
        raise ContractError(f"no training cube is at least {size}x{size}")
    for c in usable:
        if c.shape[2] != net.in_channels:
            raise ConfigError(f"cube has {c.shape[2]} bands, network expects {net.in_channels}")
    if mask.shape[0] < size or mask.shape[1] < size:
        raise ConfigError(f"mask {mask.shape} is smaller than the {size}x{size} patch")
    patch_mask = np.asarray(mask[:size, :size], dtype=np.float64)

    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(net, seed=cfg.seed, dtype=dtype)
    state = AdamState()
    log: list[dict] = []

    for step in range(cfg.steps):
        params.zero_grad()
        loss = None
        l1_sum = fdl_sum = 0.0
        for _ in range(cfg.batch_size):
            gt = _sample_patch(usable, size, rng)
            if cfg.augment:
                gt = augment(gt, rng)
            meas = cassi.simulate_measurement(gt, patch_mask, cfg.step)
            if cfg.shot_noise_bits:
                meas = cassi.inject_shot_noise(meas, cfg.shot_noise_bits, int(rng.integers(2**31)))
            x = Tensor(network_input(meas, patch_mask, net.in_channels).astype(dtype))
            pred = hdnet_forward(x, params, net)
            sample_loss, l1, fdl = total_loss(np.moveaxis(gt, -1, 0), pred, cfg)
            loss = sample_loss if loss is None else loss + sample_loss
            l1_sum += l1
            fdl_sum += fdl
        loss = loss / cfg.batch_size
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss at step {step}")
        loss.backward()
        lr = lr_schedule(step / cfg.steps_per_epoch, cfg.lr0, cfg.halve_every_epochs)
        adam_step(params, state, lr)
        log.append(
            {"step": step, "l1": l1_sum / cfg.batch_size, "fdl": fdl_sum / cfg.batch_size, "total": value, "lr": lr}
        )
        if step % 50 == 0:
            logger.info("step %d  total %.6f  l1 %.6f  fdl %.6f  lr %.3g", step, value, log[-1]["l1"], log[-1]["fdl"], lr)
    return TrainResult(params=params, log=log)

"""HDNet: residual trunk with one high-resolution attention block.

Layout: shallow 3x3 stem, ``blocks_pre`` residual blocks, spectral and
spatial attention on the same features, grouped fusion of the two,
``blocks_post`` residual blocks, then a 3x3 conv whose output is added to
the stem features before the 3x3 head maps back to the input band count.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class NetConfig:
    channels: int = 64
    blocks_pre: int = 16
    blocks_post: int = 16
    groups: int = 4
    in_channels: int = 28

    def __post_init__(self):
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(f"channels must be even and >= 2, got {self.channels}")
        if self.groups < 1 or self.channels % self.groups:
            raise ConfigError(f"channels={self.channels} is not divisible by groups={self.groups}")
        if self.blocks_pre < 0 or self.blocks_post < 0:
            raise ConfigError("residual block counts must be >= 0")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def out_channels(self) -> int:
        return self.in_channels

    @classmethod
    def full(cls) -> "NetConfig":
        return cls()

    @classmethod
    def desk(cls) -> "NetConfig":
        return cls(channels=8, blocks_pre=1, blocks_post=1, groups=2, in_channels=4)

    def to_dict(self) -> dict:
        return asdict(self)


def _conv_params(k: int, cin: int, cout: int) -> int:
    return k * k * cin * cout + cout


def count_params(config: NetConfig) -> int:
    """Scalar parameter count of :func:`init_params` for this config, in closed form."""
    c, n, m = config.channels, config.in_channels, config.groups
    half, cg = c // 2, c // m
    stem = _conv_params(3, n, c)
    blocks = (config.blocks_pre + config.blocks_post) * 2 * _conv_params(3, c, c)
    spectral = _conv_params(1, c, 1) + _conv_params(1, c, half) + _conv_params(1, half, c)
    spatial = 2 * _conv_params(1, c, half)
    fusion = m * (9 * cg + cg + _conv_params(1, cg, cg))
    tail = _conv_params(3, c, c) + _conv_params(3, c, n)
    return stem + blocks + spectral + spatial + fusion + tail


def init_params(config: NetConfig, seed: int = 0, dtype=np.float64) -> ParamStore:
    """Uniform(+-1/sqrt(fan_in)) weights and zero biases, in a fixed order."""
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    c, n, m = config.channels, config.in_channels, config.groups
    half, cg = c // 2, c // m

    def conv(name, cout, cin_per_group, k):
        fan_in = cin_per_group * k * k
        ps.add(f"{name}.w", ad.uniform_init(rng, (cout, cin_per_group, k, k), fan_in).astype(dtype))
        ps.add(f"{name}.b", np.zeros(cout, dtype=dtype))

    conv("stem", c, n, 3)
    for i in range(config.blocks_pre):
        conv(f"pre.{i}.conv1", c, c, 3)
        conv(f"pre.{i}.conv2", c, c, 3)
    conv("spe.q", 1, c, 1)
    conv("spe.k", half, c, 1)
    conv("spe.gate", c, half, 1)
    conv("spa.q", half, c, 1)
    conv("spa.k", half, c, 1)
    for i in range(m):
        conv(f"eff.{i}.dw", cg, 1, 3)
        conv(f"eff.{i}.pw", cg, cg, 1)
    for i in range(config.blocks_post):
        conv(f"post.{i}.conv1", c, c, 3)
        conv(f"post.{i}.conv2", c, c, 3)
    conv("skip", c, c, 3)
    conv("head", n, c, 3)
    return ps


def zero_params(config: NetConfig, dtype=np.float64) -> ParamStore:
    ps = init_params(config, seed=0, dtype=dtype)
    ps.load_flat(np.zeros(ps.num_elements(), dtype=dtype))
    return ps


def _conv(x: Tensor, ps: ParamStore, name: str, padding: int = 0, groups: int = 1) -> Tensor:
    return ad.conv2d(x, ps[f"{name}.w"], ps[f"{name}.b"], padding=padding, groups=groups)


def _check_channels(x: Tensor, expected: int, what: str) -> None:
    if x.ndim != 3 or x.shape[0] != expected:
        raise ContractError(f"{what} expects ({expected}, H, W), got {x.shape}")


def residual_block(x: Tensor, ps: ParamStore, name: str) -> Tensor:
    _check_channels(x, ps[f"{name}.conv1.w"].shape[1], "residual block")
    return x + _conv(ad.relu(_conv(x, ps, f"{name}.conv1", padding=1)), ps, f"{name}.conv2", padding=1)


def hr_spectral_attention(x: Tensor, ps: ParamStore, name: str = "spe") -> Tensor:
    """Per-channel gates from a full-resolution query pooled over space."""
    c, h, w = x.shape
    _check_channels(x, ps[f"{name}.q.w"].shape[1], "spectral attention")
    q = ad.softmax(ad.reshape(_conv(x, ps, f"{name}.q"), (h * w, 1)), axis=0)
    k = ad.reshape(_conv(x, ps, f"{name}.k"), (c // 2, h * w))
    v = ad.reshape(ad.matmul(k, q), (c // 2, 1, 1))
    gate = ad.sigmoid(_conv(v, ps, f"{name}.gate"))
    return x * gate


def hr_spatial_attention(x: Tensor, ps: ParamStore, name: str = "spa") -> Tensor:
    """Per-pixel gates from a channel-softmaxed query applied to full-resolution keys."""
    c, h, w = x.shape
    _check_channels(x, ps[f"{name}.q.w"].shape[1], "spatial attention")
    q = ad.softmax(ad.reshape(ad.global_avg_pool(_conv(x, ps, f"{name}.q")), (1, c // 2)), axis=1)
    k = ad.reshape(_conv(x, ps, f"{name}.k"), (c // 2, h * w))
    v = ad.matmul(q, k)
    gate = ad.sigmoid(ad.reshape(v, (1, h, w)))
    return x * gate


def efficient_feature_fusion(x_spe: Tensor, x_spa: Tensor, ps: ParamStore, groups: int, name: str = "eff") -> Tensor:
    """Sum both attention branches, then reweight each channel group by a softmax over its channels."""
    if x_spe.shape != x_spa.shape:
        raise ContractError(f"attention branches differ in shape: {x_spe.shape} vs {x_spa.shape}")
    fused = x_spe + x_spa
    out = []
    for i, part in enumerate(ad.channel_split(fused, groups)):
        cg = part.shape[0]
        feat = _conv(part, ps, f"{name}.{i}.dw", padding=1, groups=cg)
        weights = ad.softmax(_conv(ad.max_pool3x3(feat), ps, f"{name}.{i}.pw"), axis=0)
        out.append(weights * part + part)
    return ad.concat(out, axis=0)


def hdnet_forward(x_in: Tensor, ps: ParamStore, config: NetConfig) -> Tensor:
    _check_channels(x_in, config.in_channels, "hdnet")
    x0 = _conv(x_in, ps, "stem", padding=1)
    x = x0
    for i in range(config.blocks_pre):
        x = residual_block(x, ps, f"pre.{i}")
    x = efficient_feature_fusion(hr_spectral_attention(x, ps), hr_spatial_attention(x, ps), ps, config.groups)
    for i in range(config.blocks_post):
        x = residual_block(x, ps, f"post.{i}")
    return _conv(_conv(x, ps, "skip", padding=1) + x0, ps, "head", padding=1)

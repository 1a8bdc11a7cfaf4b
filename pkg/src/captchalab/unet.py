"""U-Net noise predictor.

Mirror-symmetric encoder/decoder with residual blocks everywhere, strided
3x3 downsampling convolutions (stride 2, padding 1), nearest-neighbour
upsampling, skip connections, and self-attention at the configured stages
plus the middle block. The timestep enters every residual block through a
sinusoidal embedding followed by a small MLP.

The network is fully convolutional: a model trained at one resolution can
be applied at another as long as the side stays divisible by
2**level_count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NoisePredictor
from .errors import ConfigurationError


@dataclass(frozen=True)
class UNetConfig:
    image_size: int = 128
    base_channels: int = 64
    level_count: int = 3
    attention_levels: tuple = (2,)
    time_embedding_dim: int = 256
    timesteps: int = 1000

    def __post_init__(self):
        if self.image_size % (2**self.level_count) != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} not divisible by 2^{self.level_count}"
            )
        if self.base_channels < 8 or self.base_channels % 8 != 0:
            raise ConfigurationError("base_channels must be a positive multiple of 8")
        if any(not 0 <= a < self.level_count for a in self.attention_levels):
            raise ConfigurationError(
                f"attention_levels {self.attention_levels} outside [0, {self.level_count})"
            )
        if self.timesteps < 1 or self.time_embedding_dim % 2 != 0:
            raise ConfigurationError("timesteps >= 1 and even time_embedding_dim required")


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos position encoding of integer timesteps."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch, temb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(8, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Single-head spatial self-attention over the feature map."""

    def __init__(self, ch):
        super().__init__()
        self.norm = nn.GroupNorm(8, ch)
        self.qkv = nn.Conv2d(ch, ch * 3, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=1)
        q = q.reshape(b, c, h * w).permute(0, 2, 1)
        k = k.reshape(b, c, h * w)
        v = v.reshape(b, c, h * w).permute(0, 2, 1)
        attn = torch.softmax(torch.bmm(q, k) / math.sqrt(c), dim=-1)
        out = torch.bmm(attn, v).permute(0, 2, 1).reshape(b, c, h, w)
        return x + self.proj(out)


class Downsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        # 3x3, stride 2, padding 1: halves the feature-map side exactly
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


def _channel_multipliers(levels: int) -> list[int]:
    return [min(2**i, 4) for i in range(levels)]


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        temb_dim = cfg.time_embedding_dim
        mults = _channel_multipliers(cfg.level_count)

        self.time_mlp = nn.Sequential(
            nn.Linear(temb_dim, temb_dim * 2), nn.SiLU(), nn.Linear(temb_dim * 2, temb_dim)
        )
        self.stem = nn.Conv2d(3, ch, 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        skip_chs = [ch]
        cur = ch
        for lvl, m in enumerate(mults):
            out = ch * m
            blocks = nn.ModuleList([ResidualBlock(cur, out, temb_dim), ResidualBlock(out, out, temb_dim)])
            self.down_blocks.append(blocks)
            self.down_attn.append(SelfAttention(out) if lvl in cfg.attention_levels else nn.Identity())
            self.downsamples.append(Downsample(out))
            cur = out
            skip_chs.append(out)

        self.mid1 = ResidualBlock(cur, cur, temb_dim)
        self.mid_attn = SelfAttention(cur)
        self.mid2 = ResidualBlock(cur, cur, temb_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        for lvl in reversed(range(cfg.level_count)):
            out = ch * mults[lvl]
            skip = skip_chs.pop()
            self.upsamples.append(Upsample(cur))
            self.up_blocks.append(
                nn.ModuleList(
                    [ResidualBlock(cur + skip, out, temb_dim), ResidualBlock(out, out, temb_dim)]
                )
            )
            self.up_attn.append(SelfAttention(out) if lvl in cfg.attention_levels else nn.Identity())
            cur = out

        self.out_norm = nn.GroupNorm(8, cur)
        self.out_conv = nn.Conv2d(cur, 3, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x, t):
        temb = self.time_mlp(sinusoidal_embedding(t, self.cfg.time_embedding_dim))
        h = self.stem(x)
        skips = [h]
        for blocks, attn, down in zip(self.down_blocks, self.down_attn, self.downsamples):
            for blk in blocks:
                h = blk(h, temb)
            h = attn(h)
            skips.append(h)
            h = down(h)

        h = self.mid2(self.mid_attn(self.mid1(h, temb)), temb)

        for up, blocks, attn in zip(self.upsamples, self.up_blocks, self.up_attn):
            h = up(h)
            h = torch.cat([h, skips.pop()], dim=1)
            for blk in blocks:
                h = blk(h, temb)
            h = attn(h)

        return self.out_conv(F.silu(self.out_norm(h)))


class UNetPredictor(NoisePredictor):
    """NoisePredictor adapter around the torch module.

    Images cross this boundary as HxWx3 float32 arrays in model space; the
    wrapped module is kept in eval mode and is safe for concurrent
    read-only prediction.
    """

    def __init__(self, module: UNet, config: UNetConfig):
        self.module = module
        self.config = config
        self.module.eval()

    def predict(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.predict_batch(x[None], np.array([t]))[0]

    def predict_batch(self, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
        side = xs.shape[1]
        if side % (2**self.config.level_count) != 0:
            raise ConfigurationError(
                f"input side {side} not divisible by 2^{self.config.level_count}"
            )
        if np.any(ts < 0) or np.any(ts >= self.config.timesteps):
            raise ValueError(f"timesteps {ts} outside [0, {self.config.timesteps})")
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(xs.transpose(0, 3, 1, 2))).float()
            t = torch.from_numpy(np.ascontiguousarray(ts)).long()
            eps = self.module(x, t)
        return eps.numpy().transpose(0, 2, 3, 1)


def build_unet(config: UNetConfig, init_seed: int | None = None) -> UNetPredictor:
    """Construct a freshly initialised predictor; seed makes init reproducible."""
    if init_seed is not None:
        torch.manual_seed(init_seed)
    return UNetPredictor(UNet(config), config)

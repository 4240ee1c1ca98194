"""Network building blocks: attention, residual conv stages, temporal units."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def _group_norm(ch: int) -> nn.GroupNorm:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return nn.GroupNorm(g, ch)
    return nn.GroupNorm(1, ch)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10_000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(t, self.dim).to(self.net[0].weight.dtype)
        return self.net(emb)


class Attention(nn.Module):
    """Multi-head attention; self-attention when kv is omitted."""

    def __init__(self, dim: int, n_heads: int, kv_dim: int | None = None, zero_out: bool = False):
        super().__init__()
        if dim % n_heads:
            raise ValueError("dim must be divisible by n_heads")
        self.n_heads = n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim or dim, dim)
        self.v = nn.Linear(kv_dim or dim, dim)
        self.out = nn.Linear(dim, dim)
        if zero_out:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, kv: torch.Tensor | None = None) -> torch.Tensor:
        kv = x if kv is None else kv
        B, N, D = x.shape
        h = self.n_heads
        q = self.q(x).view(B, N, h, D // h).transpose(1, 2)
        k = self.k(kv).view(B, kv.shape[1], h, D // h).transpose(1, 2)
        v = self.v(kv).view(B, kv.shape[1], h, D // h).transpose(1, 2)
        o = F.scaled_dot_product_attention(q, k, v)
        return self.out(o.transpose(1, 2).reshape(B, N, D))


class ResBlock2d(nn.Module):
    """Pre-norm residual conv block applied per frame, optional time bias."""

    def __init__(self, ch: int, time_dim: int | None = None, kernel: tuple[int, int] = (3, 3)):
        super().__init__()
        pad = (kernel[0] // 2, kernel[1] // 2)
        self.norm1 = _group_norm(ch)
        self.conv1 = nn.Conv2d(ch, ch, kernel, padding=pad)
        self.norm2 = _group_norm(ch)
        self.conv2 = nn.Conv2d(ch, ch, kernel, padding=pad)
        self.time_proj = nn.Linear(time_dim, ch) if time_dim else None

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor | None = None) -> torch.Tensor:
        # x: (B*F, C, H, W); t_emb already expanded to (B*F, time_dim)
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and t_emb is not None:
            h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class TemporalUnit(nn.Module):
    """3D conv (bottlenecked), temporal attention, and a learned frame-mixing
    matrix; conv/attention are residual with zero-initialized outputs so a
    fresh unit starts as a near-identity."""

    def __init__(self, ch: int, n_heads: int, max_frames: int,
                 kernel: tuple[int, int, int] = (4, 3, 3), width: int = 16):
        super().__init__()
        self.kernel = kernel
        self.max_frames = max_frames
        self.norm1 = _group_norm(ch)
        self.conv_in = nn.Conv3d(ch, width, 1)
        self.conv = nn.Conv3d(width, width, kernel)
        self.conv_out = nn.Conv3d(width, ch, 1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        self.norm2 = _group_norm(ch)
        heads = n_heads if ch % n_heads == 0 else 1
        self.attn = Attention(ch, heads, zero_out=True)
        self.mix = nn.Parameter(torch.eye(max_frames) + 0.01 * torch.randn(max_frames, max_frames))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, C, Fr, H, W = x.shape
        if Fr > self.max_frames:
            raise ValueError(f"{Fr} frames exceeds temporal capacity {self.max_frames}")
        kt, kh, kw = self.kernel
        h = self.conv_in(F.silu(self.norm1(x)))
        h = F.pad(h, (kw // 2, (kw - 1) // 2, kh // 2, (kh - 1) // 2, (kt - 1) // 2 + (kt - 1) % 2, (kt - 1) // 2))
        h = self.conv_out(F.silu(self.conv(h)))
        x = x + h

        tok = self.norm2(x).permute(0, 3, 4, 2, 1).reshape(B * H * W, Fr, C)
        x = x + self.attn(tok).reshape(B, H, W, Fr, C).permute(0, 4, 3, 1, 2)

        m = self.mix[:Fr, :Fr]
        return torch.einsum("gf,bcfhw->bcghw", m, x)


class BranchedTemporal(nn.Module):
    """Two identically shaped temporal units; exactly one runs per call."""

    def __init__(self, ch: int, n_heads: int, max_frames: int, kernel, width: int):
        super().__init__()
        self.temporal_real = TemporalUnit(ch, n_heads, max_frames, kernel, width)
        self.temporal_spin = TemporalUnit(ch, n_heads, max_frames, kernel, width)

    def forward(self, x: torch.Tensor, branch: str) -> torch.Tensor:
        if branch == "real":
            return self.temporal_real(x)
        if branch == "spin":
            return self.temporal_spin(x)
        raise ValueError(f"unknown branch {branch!r}")


class DiTBlock(nn.Module):
    """Transformer block: pose-augmented self-attention, garment cross-attention, MLP."""

    def __init__(self, hidden: int, n_heads: int, pose_channels: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden)
        self.pose_fuse = nn.Linear(hidden + pose_channels, hidden)
        self.attn = Attention(hidden, n_heads, zero_out=True)
        self.norm2 = nn.LayerNorm(hidden)
        self.cross = Attention(hidden, n_heads, zero_out=True)
        self.norm3 = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, hidden * mlp_ratio),
            nn.SiLU(),
            nn.Linear(hidden * mlp_ratio, hidden),
        )
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(
        self,
        x: torch.Tensor,            # (B, N, hidden)
        pose_tokens: torch.Tensor,  # (B, N, pose_channels)
        garment_tokens: torch.Tensor,  # (B, M, hidden)
        t_emb: torch.Tensor,        # (B, hidden)
    ) -> torch.Tensor:
        h = self.pose_fuse(torch.cat([self.norm1(x), pose_tokens], dim=-1)) + t_emb[:, None, :]
        x = x + self.attn(h)
        x = x + self.cross(self.norm2(x), garment_tokens)
        x = x + self.mlp(self.norm3(x))
        return x


class Downsample(nn.Module):
    def __init__(self, ch_in: int, ch_out: int):
        super().__init__()
        self.conv = nn.Conv2d(ch_in, ch_out, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch_in: int, ch_out: int):
        super().__init__()
        self.conv = nn.Conv2d(ch_in, ch_out, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


def sinusoidal_time_embedding(t, dim: int, scale: float = 1000.0) -> torch.Tensor:
    """Interleaved ``[sin, cos]`` embedding of ``scale * t``.

    Frequencies run geometrically from 1 down to ``1e-4`` so that ``dim=2``
    gives ``[sin(1000 t), cos(1000 t)]``. Accepts a float or a ``[B]`` tensor
    and returns ``[dim]`` or ``[B, dim]``.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    scalar = not isinstance(t, torch.Tensor) or t.ndim == 0
    t = torch.as_tensor(t, dtype=torch.float64 if not isinstance(t, torch.Tensor) else None)
    if bool(torch.any((t < 0) | (t > 1))):
        raise ValueError("process step must lie in [0, 1]")
    t = t.reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = scale * t[:, None] * freqs[None, :]
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).reshape(t.shape[0], dim)
    return emb[0] if scalar else emb


def patchify(latent: torch.Tensor, patch_size) -> torch.Tensor:
    """``[B, C, F, T] -> [B, (F/pf)(T/pt), C pf pt]``, frequency-major token order."""
    pf, pt = patch_size
    b, c, f, t = latent.shape
    if f % pf or t % pt:
        raise ValueError(f"latent {f}x{t} not divisible by patch {pf}x{pt}")
    x = latent.reshape(b, c, f // pf, pf, t // pt, pt)
    x = x.permute(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (f // pf) * (t // pt), c * pf * pt)


def unpatchify(tokens: torch.Tensor, patch_size, channels: int, grid) -> torch.Tensor:
    pf, pt = patch_size
    gf, gt = grid
    b = tokens.shape[0]
    if tokens.shape[1] != gf * gt or tokens.shape[2] != channels * pf * pt:
        raise ValueError(f"token tensor {tuple(tokens.shape)} does not match grid {grid} / patch {patch_size}")
    x = tokens.reshape(b, gf, gt, channels, pf, pt)
    x = x.permute(0, 3, 1, 4, 2, 5)
    return x.reshape(b, channels, gf * pf, gt * pt)


def sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = positions.reshape(-1)[:, None] * omega[None, :]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim: int, grid) -> np.ndarray:
    """Fixed 2-D frequency-based positional table ``[gf * gt, dim]``.

    Half of the channels encode the frequency row, half the time column.
    """
    if dim % 4:
        raise ValueError(f"positional dim must be divisible by 4, got {dim}")
    gf, gt = grid
    rows, cols = np.meshgrid(np.arange(gf, dtype=np.float64), np.arange(gt, dtype=np.float64), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, rows), sincos_1d(dim // 2, cols)], axis=1)


def norm_groups(channels: int, max_groups: int = 32) -> int:
    for g in (32, 16, 8, 4, 2, 1):
        if g <= max_groups and channels % g == 0 and channels // g >= 2:
            return g
    return 1


class ConditioningMLP(nn.Module):
    """Maps the sinusoidal step embedding to the shared conditioning vector."""

    def __init__(self, in_dim: int, hidden: int, depth: int = 4):
        super().__init__()
        layers: list[nn.Module] = []
        dims = [in_dim] + [hidden] * depth
        for i in range(depth):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < depth - 1:
                layers.append(nn.SiLU())
        self.net = nn.Sequential(*layers)

    def forward(self, t_emb):
        return self.net(t_emb)


class DiTBlock(nn.Module):
    """Pre-norm transformer block with adaLN-Zero modulation.

    The conditioning head regresses shift/scale/gate for the attention and
    feed-forward branches; it is zero-initialized, so a fresh block is the
    identity map.
    """

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = nn.MultiheadAttention(dim, n_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(approximate="tanh"), nn.Linear(hidden, dim))
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def modulation_params(self, cond):
        return self.modulation(cond).unsqueeze(1).chunk(6, dim=-1)

    def forward(self, x, cond):
        if cond.shape[-1] != x.shape[-1]:
            raise ValueError(f"conditioning dim {cond.shape[-1]} != token dim {x.shape[-1]}")
        shift1, scale1, gate1, shift2, scale2, gate2 = self.modulation_params(cond)
        h = self.norm1(x) * (1 + scale1) + shift1
        x = x + gate1 * self.attn(h, h, h, need_weights=False)[0]
        h = self.norm2(x) * (1 + scale2) + shift2
        return x + gate2 * self.mlp(h)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cond_dim: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.GroupNorm(norm_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.cond = nn.Linear(cond_dim, out_ch)
        self.norm2 = nn.GroupNorm(norm_groups(out_ch), out_ch)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.cond(F.silu(cond))[:, :, None, None]
        h = self.conv2(self.dropout(F.silu(self.norm2(h))))
        return self.skip(x) + h


class SpatialSelfAttention(nn.Module):
    """Single-head self-attention over all positions of a feature map."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(norm_groups(channels), channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, f, t = x.shape
        qkv = self.qkv(self.norm(x)).reshape(b, 3, 1, c, f * t).transpose(-1, -2)
        # contiguous inputs let the fused CPU kernel run instead of the O(n^2)-memory math path
        q, k, v = (z.contiguous() for z in qkv.unbind(1))
        h = F.scaled_dot_product_attention(q, k, v).squeeze(1)
        return x + self.proj(h.transpose(-1, -2).reshape(b, c, f, t))


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))

"""U-DiT score network: U-Net down/up path around patchified DiT blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .layers import (
    ConditioningMLP,
    DiTBlock,
    Downsample,
    ResBlock,
    SpatialSelfAttention,
    Upsample,
    norm_groups,
    patchify,
    sincos_2d,
    sinusoidal_time_embedding,
    unpatchify,
)


@dataclass(frozen=True)
class DecoderConfig:
    n_mels: int = 80
    n_frames: int = 256
    channels: tuple[int, ...] = (64, 128)
    n_res_blocks: int = 1
    n_dit_blocks: int = 2
    patch_size: tuple[int, int] = (4, 8)
    hidden_dim: int = 256
    n_heads: int = 4
    mlp_depth: int = 4
    mlp_ratio: float = 4.0
    time_embed_dim: int = 256
    attention: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "patch_size", tuple(int(p) for p in self.patch_size))
        if self.n_dit_blocks < 1:
            raise ValueError("n_dit_blocks must be >= 1")
        if len(self.patch_size) != 2:
            raise ValueError(f"patch_size must have two entries, got {self.patch_size}")
        f, t = self.latent_shape
        factor = self.downsample_factor
        if self.n_mels % factor or self.n_frames % factor:
            raise ValueError(f"{self.n_mels}x{self.n_frames} input not divisible by downsampling factor {factor}")
        if f % self.patch_size[0] or t % self.patch_size[1]:
            raise ValueError(f"latent {f}x{t} not divisible by patch size {self.patch_size}")
        if self.hidden_dim % 4 or self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by 4 and by n_heads")

    @property
    def n_down_levels(self) -> int:
        return len(self.channels)

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.channels)

    @property
    def latent_shape(self) -> tuple[int, int]:
        factor = self.downsample_factor
        return self.n_mels // factor, self.n_frames // factor

    @property
    def grid(self) -> tuple[int, int]:
        f, t = self.latent_shape
        return f // self.patch_size[0], t // self.patch_size[1]

    @property
    def n_patches(self) -> int:
        gf, gt = self.grid
        return gf * gt


class _Level(nn.Module):
    def __init__(self, blocks: list[nn.Module], attn: nn.Module | None, resample: nn.Module):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)
        self.attn = attn if attn is not None else nn.Identity()
        self.resample = resample


class UDiT(nn.Module):
    """Score network ``s(x_t, mu, t)`` on ``[B, n_mels, n_frames]`` inputs.

    ``x_t`` and ``mu`` enter as two image channels. Each down level is a
    stack of group-norm residual blocks, a 2x strided downsample and a
    self-attention layer. The latent is split into patches, embedded with a
    fixed 2-D sinusoidal table and run through adaLN-Zero DiT blocks that
    share one step-conditioning MLP. The up path mirrors the down path with
    skip concatenation, and the zero-initialized output convolution makes the
    fresh network output exactly zero.
    """

    def __init__(self, cfg: DecoderConfig = DecoderConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.cond_mlp = ConditioningMLP(cfg.time_embed_dim, d, cfg.mlp_depth)
        ch = cfg.channels
        self.conv_in = nn.Conv2d(2, ch[0], 3, padding=1)

        self.down = nn.ModuleList()
        prev = ch[0]
        for c in ch:
            blocks = [ResBlock(prev if i == 0 else c, c, d, cfg.dropout) for i in range(cfg.n_res_blocks)]
            attn = SpatialSelfAttention(c) if cfg.attention else None
            self.down.append(_Level(blocks, attn, Downsample(c)))
            prev = c

        latent_ch = ch[-1]
        pf, pt = cfg.patch_size
        self.patch_dim = latent_ch * pf * pt
        self.patch_embed = nn.Linear(self.patch_dim, d)
        self.register_buffer("pos_embed", torch.from_numpy(sincos_2d(d, cfg.grid)).float()[None], persistent=False)
        self.dit_blocks = nn.ModuleList([DiTBlock(d, cfg.n_heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.n_dit_blocks)])
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.final_modulation = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        nn.init.zeros_(self.final_modulation[1].weight)
        nn.init.zeros_(self.final_modulation[1].bias)
        self.patch_out = nn.Linear(d, self.patch_dim)

        self.up = nn.ModuleList()
        outs = list(ch[:1]) + list(ch[:-1])
        for level in reversed(range(len(ch))):
            c, skip, out = ch[level], ch[level], outs[level]
            blocks = [ResBlock((c + skip) if i == 0 else out, out, d, cfg.dropout) for i in range(cfg.n_res_blocks)]
            attn = SpatialSelfAttention(c) if cfg.attention else None
            self.up.append(_Level(blocks, attn, Upsample(c)))

        self.norm_out = nn.GroupNorm(norm_groups(ch[0]), ch[0])
        self.conv_out = nn.Conv2d(ch[0], 1, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def conditioning(self, t, batch: int, dtype, device) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=dtype, device=device)
        if t.ndim == 0:
            t = t.expand(batch)
        return self.cond_mlp(sinusoidal_time_embedding(t, self.cfg.time_embed_dim).to(dtype))

    def forward(self, x_t: torch.Tensor, mu: torch.Tensor, t) -> torch.Tensor:
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t, mu = x_t[None], mu[None]
        if x_t.shape != mu.shape:
            raise ValueError(f"x_t {tuple(x_t.shape)} and mu {tuple(mu.shape)} differ")
        if x_t.shape[1:] != (self.cfg.n_mels, self.cfg.n_frames):
            raise ValueError(
                f"decoder expects [B, {self.cfg.n_mels}, {self.cfg.n_frames}] (pad to the frame budget), "
                f"got {tuple(x_t.shape)}"
            )
        b = x_t.shape[0]
        cond = self.conditioning(t, b, x_t.dtype, x_t.device)

        h = self.conv_in(torch.stack([x_t, mu], dim=1))
        skips = []
        for level in self.down:
            for block in level.blocks:
                h = block(h, cond)
            skips.append(h)
            h = level.attn(level.resample(h))

        latent_ch = h.shape[1]
        tokens = self.patch_embed(patchify(h, self.cfg.patch_size)) + self.pos_embed.to(h.dtype)
        for block in self.dit_blocks:
            tokens = block(tokens, cond)
        shift, scale = self.final_modulation(cond).unsqueeze(1).chunk(2, dim=-1)
        tokens = self.final_norm(tokens) * (1 + scale) + shift
        h = unpatchify(self.patch_out(tokens), self.cfg.patch_size, latent_ch, self.cfg.grid)

        for level in self.up:
            h = level.resample(level.attn(h))
            h = torch.cat([h, skips.pop()], dim=1)
            for block in level.blocks:
                h = block(h, cond)

        out = self.conv_out(F.silu(self.norm_out(h))).squeeze(1)
        if not bool(torch.isfinite(out).all()):
            raise FloatingPointError("non-finite activations in score network output")
        return out[0] if squeeze else out

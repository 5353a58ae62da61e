"""Text encoder and duration predictor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 192
    n_heads: int = 2
    n_layers: int = 6
    ff_dim: int = 768
    kernel_size: int = 3
    prenet_layers: int = 3
    dropout: float = 0.1


@dataclass(frozen=True)
class DurationConfig:
    filter_dim: int = 256
    kernel_size: int = 3
    dropout: float = 0.1


def lengths_to_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def positional_table(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(n, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table.to(dtype)


class ConvNorm(nn.Module):
    """Conv1d over time on ``[B, N, C]`` inputs, then ReLU, LayerNorm, dropout."""

    def __init__(self, in_dim: int, out_dim: int, kernel_size: int, dropout: float):
        super().__init__()
        self.conv = nn.Conv1d(in_dim, out_dim, kernel_size, padding=kernel_size // 2)
        self.norm = nn.LayerNorm(out_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        h = self.conv((x * mask).transpose(1, 2)).transpose(1, 2)
        return self.dropout(self.norm(torch.relu(h)))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, n_heads, dropout=dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff_dim, dim))
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, key_padding):
        h = self.attn(x, x, x, key_padding_mask=key_padding, need_weights=False)[0]
        x = self.norm1(x + self.dropout(h))
        return self.norm2(x + self.dropout(self.ff(x)))


class TextEncoder(nn.Module):
    """Embedding, 3-conv pre-net with a linear layer, transformer stack, projection to mel dims."""

    def __init__(self, cfg: EncoderConfig, vocab_size: int, n_mels: int = 80):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        d = cfg.hidden_dim
        self.embedding = nn.Embedding(vocab_size, d, padding_idx=0)
        nn.init.normal_(self.embedding.weight, 0.0, d**-0.5)
        self.prenet = nn.ModuleList([ConvNorm(d, d, cfg.kernel_size, cfg.dropout) for _ in range(cfg.prenet_layers)])
        self.prenet_out = nn.Linear(d, d)
        self.blocks = nn.ModuleList([EncoderBlock(d, cfg.n_heads, cfg.ff_dim, cfg.dropout) for _ in range(cfg.n_layers)])
        self.proj = nn.Linear(d, n_mels)

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """``tokens [B, N]`` (or ``[N]``) -> ``mu_tokens [B, N, n_mels]``; padded rows are zero."""
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None]
        if lengths is None:
            lengths = torch.full((tokens.shape[0],), tokens.shape[1], dtype=torch.long)
        if int(tokens.min()) < 0 or int(tokens.max()) >= self.vocab_size:
            raise ValueError(f"token id out of vocabulary range [0, {self.vocab_size})")
        mask = lengths_to_mask(lengths, tokens.shape[1]).unsqueeze(-1)
        x = self.embedding(tokens) * math.sqrt(self.cfg.hidden_dim)
        h = x
        for layer in self.prenet:
            h = layer(h, mask)
        x = x + self.prenet_out(h)
        x = x + positional_table(tokens.shape[1], self.cfg.hidden_dim, x.dtype).to(x.device)
        x = x * mask
        key_padding = ~mask.squeeze(-1)
        for block in self.blocks:
            x = block(x, key_padding) * mask
        out = self.proj(x) * mask
        return out[0] if squeeze else out


class DurationPredictor(nn.Module):
    """Two conv layers (ReLU, LayerNorm, dropout each) and a linear head giving log-durations."""

    def __init__(self, cfg: DurationConfig, in_dim: int = 80):
        super().__init__()
        self.layers = nn.ModuleList(
            [
                ConvNorm(in_dim, cfg.filter_dim, cfg.kernel_size, cfg.dropout),
                ConvNorm(cfg.filter_dim, cfg.filter_dim, cfg.kernel_size, cfg.dropout),
            ]
        )
        self.head = nn.Linear(cfg.filter_dim, 1)

    def forward(self, mu_tokens: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """``[B, N, in_dim] -> [B, N]``. Callers pass a detached input."""
        squeeze = mu_tokens.ndim == 2
        if squeeze:
            mu_tokens = mu_tokens[None]
        if lengths is None:
            lengths = torch.full((mu_tokens.shape[0],), mu_tokens.shape[1], dtype=torch.long)
        mask = lengths_to_mask(lengths, mu_tokens.shape[1]).unsqueeze(-1)
        h = mu_tokens
        for layer in self.layers:
            h = layer(h, mask)
        out = (self.head(h) * mask).squeeze(-1)
        return out[0] if squeeze else out

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
from torch import nn

from .decoder import DecoderConfig, UDiT
from .encoder import DurationConfig, DurationPredictor, EncoderConfig, TextEncoder


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_mels: int = 80
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    duration: DurationConfig = field(default_factory=DurationConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        if self.decoder.n_mels != self.n_mels:
            raise ValueError(f"decoder n_mels {self.decoder.n_mels} != model n_mels {self.n_mels}")

    @classmethod
    def tiny(cls, vocab_size: int, n_mels: int = 80, n_frames: int = 256, **decoder_overrides) -> ModelConfig:
        """Desk-scale widths used by the smoke-training path and tests."""
        decoder = dict(
            n_mels=n_mels,
            n_frames=n_frames,
            channels=(16, 32),
            n_dit_blocks=2,
            patch_size=(4, 8),
            hidden_dim=64,
            n_heads=4,
            time_embed_dim=64,
        )
        decoder.update(decoder_overrides)
        return cls(
            vocab_size=vocab_size,
            n_mels=n_mels,
            encoder=EncoderConfig(hidden_dim=64, n_heads=2, n_layers=6, ff_dim=128, dropout=0.1),
            duration=DurationConfig(filter_dim=64, dropout=0.1),
            decoder=DecoderConfig(**decoder),
        )

    def with_decoder(self, **changes) -> ModelConfig:
        return replace(self, decoder=replace(self.decoder, **changes))


class UDiTTTS(nn.Module):
    """Text encoder, duration predictor and U-DiT decoder bundled together."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = TextEncoder(cfg.encoder, cfg.vocab_size, cfg.n_mels)
        self.duration_predictor = DurationPredictor(cfg.duration, cfg.n_mels)
        self.decoder = UDiT(cfg.decoder)

    def encode(self, tokens, lengths=None):
        return self.encoder(tokens, lengths)

    def predict_log_durations(self, mu_tokens_detached, lengths=None):
        if mu_tokens_detached.requires_grad and mu_tokens_detached.grad_fn is not None:
            raise ValueError("duration predictor input must be detached from the encoder graph")
        return self.duration_predictor(mu_tokens_detached, lengths)

    def score(self, x_t, mu, t):
        return self.decoder(x_t, mu, t)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameters_finite(module: nn.Module) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in module.parameters())

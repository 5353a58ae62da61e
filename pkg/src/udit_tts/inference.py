"""Text-to-waveform synthesis with segmentation and frame-budget padding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .alignment import DurationVector, expand_by_durations
from .audio import MelSpectrogram, Waveform, invert_mel
from .checkpoint import Checkpoint
from .diffusion import NoiseSchedule, reverse_ode_sample
from .text import PhonemeSequence, segment_phonemes, text_to_phonemes
from .training import derive_seed

SEGMENT_MIN = 22
SEGMENT_MAX = 25


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisConfig:
    n_steps: int = 80
    tau: float = 1.5
    frame_budget: int = 256
    seed: int = 0
    duration_scale: float = 1.0
    griffin_lim_iters: int = 60

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.frame_budget < 4 or self.frame_budget % 4:
            raise ValueError(f"frame_budget must be a positive multiple of 4, got {self.frame_budget}")
        if not self.duration_scale > 0:
            raise ValueError("duration_scale must be positive")


@dataclass
class SegmentOutput:
    phonemes: PhonemeSequence
    durations: DurationVector
    mel: MelSpectrogram
    waveform: Waveform


@dataclass
class SynthesisResult:
    waveform: Waveform
    segments: list[SegmentOutput]

    @property
    def mels(self) -> list[MelSpectrogram]:
        return [s.mel for s in self.segments]


def pad_to_budget(mu: torch.Tensor, budget: int, pad_value: float) -> tuple[torch.Tensor, int]:
    """Right-pad a ``[n_mels, F]`` frame prior to ``budget`` frames with ``pad_value``."""
    real = mu.shape[-1]
    if real > budget:
        raise BudgetError(f"{real} frames exceeds budget of {budget}")
    if real == budget:
        return mu, real
    return torch.nn.functional.pad(mu, (0, budget - real), value=pad_value), real


def round_durations(log_d: torch.Tensor, scale: float = 1.0) -> DurationVector:
    """``max(1, round_half_up(exp(log_d) * scale))``."""
    d = np.floor(np.exp(log_d.detach().double().cpu().numpy()) * scale + 0.5)
    return DurationVector(np.maximum(d, 1).astype(np.int64))


class Synthesizer:
    def __init__(self, ckpt: Checkpoint, dtype: torch.dtype = torch.float32, sched: NoiseSchedule = NoiseSchedule()):
        self.ckpt = ckpt
        self.model = ckpt.build_model(dtype)
        self.lexicon = ckpt.lexicon()
        self.dtype = dtype
        self.sched = sched

    def durations(self, seq: PhonemeSequence, cfg: SynthesisConfig) -> tuple[torch.Tensor, DurationVector]:
        tokens = torch.as_tensor(seq.tokens, dtype=torch.long)[None]
        with torch.no_grad():
            mu_tok = self.model.encode(tokens)
            log_d = self.model.predict_log_durations(mu_tok)
        return mu_tok[0], round_durations(log_d[0], cfg.duration_scale)

    def _plan(self, seq: PhonemeSequence, cfg: SynthesisConfig):
        """Yield ``(phonemes, mu_tokens, durations)`` with every segment inside the budget."""
        for seg in segment_phonemes(seq, SEGMENT_MIN, SEGMENT_MAX):
            mu_tok, d = self.durations(seg, cfg)
            if d.n_frames <= cfg.frame_budget:
                yield seg, mu_tok, d
                continue
            half = len(seg) // 2
            if half < 1:
                raise BudgetError(f"single token expands to {d.n_frames} frames, exceeds budget of {cfg.frame_budget}")
            for part in (seg[:half], seg[half:]):
                mu_p, d_p = self.durations(part, cfg)
                if d_p.n_frames > cfg.frame_budget:
                    raise BudgetError(
                        f"segment of {len(part)} tokens expands to {d_p.n_frames} frames after re-splitting, "
                        f"exceeds budget of {cfg.frame_budget}"
                    )
                yield part, mu_p, d_p

    def synthesize_phonemes(self, seq: PhonemeSequence, cfg: SynthesisConfig) -> SynthesisResult:
        if len(seq) == 0:
            raise ValueError("empty phoneme sequence")
        mel_cfg = self.ckpt.mel_config
        segments = []
        for index, (seg, mu_tok, d) in enumerate(self._plan(seq, cfg)):
            mu_frames = expand_by_durations(mu_tok, d).T
            mu_pad, real = pad_to_budget(mu_frames, cfg.frame_budget, self.ckpt.mel_mean)
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, index))
            sample = reverse_ode_sample(self.model.score, mu_pad[None], cfg.n_steps, cfg.tau, gen, self.sched)
            mel = MelSpectrogram(sample[0, :, :real].double().numpy(), mel_cfg)
            wave = invert_mel(mel, n_iters=cfg.griffin_lim_iters, seed=derive_seed(cfg.seed, index, 1) % (2**32))
            segments.append(SegmentOutput(seg, d, mel, wave))
        samples = np.concatenate([s.waveform.samples for s in segments])
        return SynthesisResult(Waveform(samples, mel_cfg.sample_rate), segments)

    def synthesize(self, text: str, cfg: SynthesisConfig) -> SynthesisResult:
        return self.synthesize_phonemes(text_to_phonemes(text, self.lexicon), cfg)


def synthesize(text: str, ckpt: Checkpoint, cfg: SynthesisConfig = SynthesisConfig(), dtype=torch.float32) -> SynthesisResult:
    return Synthesizer(ckpt, dtype).synthesize(text, cfg)


def expected_length(result: SynthesisResult, hop: int) -> int:
    return sum((s.durations.n_frames - 1) * hop for s in result.segments)


"""Waveform I/O, log-mel features and Griffin-Lim mel inversion."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import torch
from scipy import signal
from scipy.io import wavfile

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 22050


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_mels: int = 80
    win_length: int = 1024
    hop_length: int = 256
    fft_size: int = 1024
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if not (0 < self.hop_length <= self.win_length <= self.fft_size):
            raise ValueError(
                f"need hop_length <= win_length <= fft_size, got "
                f"{self.hop_length}, {self.win_length}, {self.fft_size}"
            )
        if not (0 < self.n_mels < self.fft_size // 2 + 1):
            raise ValueError(f"n_mels must be in (0, {self.fft_size // 2 + 1}), got {self.n_mels}")
        if self.sample_rate <= 0 or self.log_floor <= 0:
            raise ValueError("sample_rate and log_floor must be positive")
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError(f"invalid band [{self.fmin}, {self.fmax}] for sr={self.sample_rate}")

    @property
    def log_min(self) -> float:
        return math.log(self.log_floor)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class MelSpectrogram:
    """Natural-log mel magnitudes laid out as ``[n_mels, n_frames]``."""

    values: np.ndarray
    config: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.config.n_mels:
            raise ValueError(f"expected [{self.config.n_mels}, n_frames], got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValueError("mel spectrogram needs at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel spectrogram contains non-finite entries")
        # values produced by a sampler may undershoot the floor slightly
        self.values = np.maximum(self.values, self.config.log_min)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def _resample(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return x
    ratio = Fraction(dst_rate, src_rate)
    return signal.resample_poly(x, ratio.numerator, ratio.denominator)


def resample(w: Waveform, sample_rate: int) -> Waveform:
    y = _resample(w.samples, w.sample_rate, sample_rate)
    return Waveform(np.clip(y, -1.0, 1.0), sample_rate)


def load_wav(path, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a PCM (or float) WAV file, normalize to [-1, 1] and resample.

    Multi-channel files are downmixed by averaging channels.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such wav file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ValueError(f"unsupported wav encoding in {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported wav sample type {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise ValueError(f"zero-length audio in {path}")
    x = _resample(x, rate, sample_rate)
    return Waveform(np.clip(x, -1.0, 1.0), sample_rate)


def save_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(os.fspath(path), w.sample_rate, pcm)


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    mel = freq / f_sp
    return np.where(
        freq >= min_log_hz,
        min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep,
        mel,
    )


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(mel >= min_log_mel, min_log_hz * np.exp(logstep * (mel - min_log_mel)), f_sp * mel)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """``n_mels + 2`` band edge frequencies in Hz; entry ``k + 1`` is the center of band k."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular, area-normalized filters of shape ``[n_mels, fft_size // 2 + 1]``."""
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2, cfg.fft_size // 2 + 1)
    edges = mel_band_edges(cfg)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def _window(cfg: MelConfig) -> torch.Tensor:
    return torch.hann_window(cfg.win_length, periodic=True, dtype=torch.float64)


def stft_magnitude(x: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Center-padded (zeros) Hann STFT magnitude, ``[fft_size // 2 + 1, len // hop + 1]``."""
    return _stft(torch.as_tensor(x, dtype=torch.float64), cfg).abs().numpy()


def compute_mel(w: Waveform, cfg: MelConfig | None = None) -> MelSpectrogram:
    cfg = cfg or MelConfig()
    if len(w) < 1:
        raise ValueError("cannot compute mel of an empty waveform")
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != mel config rate {cfg.sample_rate}")
    mag = stft_magnitude(w.samples, cfg)
    mel = mel_filterbank(cfg) @ mag
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


def _istft(spec: torch.Tensor, cfg: MelConfig, length: int) -> torch.Tensor:
    return torch.istft(
        spec,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop_length,
        win_length=cfg.win_length,
        window=_window(cfg),
        center=True,
        length=length,
    )


def log_mel_ceiling(cfg: MelConfig) -> float:
    """Largest log-mel value a signal bounded by [-1, 1] can produce."""
    peak = float(_window(cfg).sum())
    return math.log(peak * float(mel_filterbank(cfg).sum(axis=1).max()))


def _bounded_exp(m: MelSpectrogram) -> np.ndarray:
    return np.exp(np.minimum(m.values, log_mel_ceiling(m.config)))


def mel_to_linear(m: MelSpectrogram, n_iters: int = 200) -> np.ndarray:
    """Non-negative least-squares estimate of the linear magnitude spectrum.

    Starts from the clamped pseudo-inverse and refines with multiplicative
    updates, which keep every entry non-negative.
    """
    fb = mel_filterbank(m.config)
    target = _bounded_exp(m)
    mag = np.maximum(np.linalg.pinv(fb) @ target, 1e-10)
    numer = fb.T @ target
    gram = fb.T @ fb
    for _ in range(n_iters):
        mag *= numer / (gram @ mag + 1e-20)
    return mag


def _stft(x: torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    return torch.stft(
        x,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop_length,
        win_length=cfg.win_length,
        window=_window(cfg),
        center=True,
        pad_mode="constant",
        return_complex=True,
    )


def invert_mel(m: MelSpectrogram, n_iters: int = 60, seed: int = 0, momentum: float = 0.99) -> Waveform:
    """Griffin-Lim phase retrieval constrained to the target mel.

    Each iteration re-estimates the phase from the current signal (fast
    Griffin-Lim momentum) and projects the rebuilt magnitudes back toward the
    target mel with one multiplicative NNLS step. Values above
    :func:`log_mel_ceiling` are clipped to it first. Output length is
    ``(n_frames - 1) * hop_length``; deterministic for a fixed ``seed``.
    """
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    cfg = m.config
    length = (m.n_frames - 1) * cfg.hop_length
    if length == 0:
        return Waveform(np.zeros(0), cfg.sample_rate)
    fb = torch.from_numpy(mel_filterbank(cfg))
    target = torch.from_numpy(_bounded_exp(m))
    numer = fb.T @ target
    gram = fb.T @ fb
    mag = torch.from_numpy(mel_to_linear(m))
    rng = np.random.default_rng(seed)
    angles = torch.from_numpy(np.exp(2j * np.pi * rng.random(mag.shape)))
    prev = torch.zeros_like(angles)
    for _ in range(n_iters):
        rebuilt = _stft(_istft(mag * angles, cfg, length), cfg)[:, : m.n_frames]
        cur = rebuilt.abs() + 1e-12
        mag = cur * numer / (gram @ cur + 1e-20)
        angles = rebuilt - (momentum / (1 + momentum)) * prev
        angles = angles / (angles.abs() + 1e-16)
        prev = rebuilt
    x = _istft(mag * angles, cfg, length).numpy()
    return Waveform(np.clip(x, -1.0, 1.0), cfg.sample_rate)

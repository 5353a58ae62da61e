"""Objective metrics: log-spectral distance, Frechet distance and KL divergence."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .audio import MelConfig, MelSpectrogram, Waveform, resample, stft_magnitude

logger = logging.getLogger(__name__)

EVAL_SAMPLE_RATE = 16000
LSD_WIN = 1024
LSD_HOP = 256
MAG_FLOOR = 1e-8
FD_RIDGE = 1e-6
KL_SMOOTHING = 1e-10
NORMALIZATION_TOL = 1e-6
# sums this close to 1 are float rounding, not mis-normalization
ROUNDING_TOL = 1e-12

_LSD_CFG = MelConfig(
    sample_rate=EVAL_SAMPLE_RATE, win_length=LSD_WIN, hop_length=LSD_HOP, fft_size=LSD_WIN, fmax=EVAL_SAMPLE_RATE / 2
)


def lsd_from_magnitudes(ref: np.ndarray, gen: np.ndarray) -> float:
    """LSD in dB between two ``[bins, frames]`` magnitude spectrograms.

    Frames are truncated to the shorter input; magnitudes are clamped at
    ``1e-8`` before taking ``20 log10`` of the ratio.
    """
    n = min(ref.shape[1], gen.shape[1])
    if n < 1:
        raise ValueError("spectrogram has no frames")
    ref = np.maximum(ref[:, :n], MAG_FLOOR)
    gen = np.maximum(gen[:, :n], MAG_FLOOR)
    diff = 20.0 * np.log10(ref / gen)
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=0))))


def lsd(ref: Waveform, gen: Waveform) -> float:
    """Log-spectral distance in dB after resampling both signals to 16 kHz."""
    ref16, gen16 = resample(ref, EVAL_SAMPLE_RATE), resample(gen, EVAL_SAMPLE_RATE)
    for name, w in (("ref", ref16), ("gen", gen16)):
        if w.samples.size < LSD_WIN:
            raise ValueError(f"{name} is shorter than one {LSD_WIN}-sample analysis window")
    return lsd_from_magnitudes(stft_magnitude(ref16.samples, _LSD_CFG), stft_magnitude(gen16.samples, _LSD_CFG))


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray  # [n_samples, d]
    provenance: str = "unspecified"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding matrix has non-finite entries")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        if self.vectors.shape[0] < 2:
            raise ValueError("need at least 2 samples to fit a covariance")
        return self.vectors.mean(axis=0), np.atleast_2d(np.cov(self.vectors, rowvar=False))


def mel_stats_embedding(m: MelSpectrogram) -> np.ndarray:
    """Per-clip ``[mean, std]`` of every mel band (``2 * n_mels`` values)."""
    return np.concatenate([m.values.mean(axis=1), m.values.std(axis=1)])


def mel_stats_embeddings(mels) -> EmbeddingSet:
    return EmbeddingSet(np.stack([mel_stats_embedding(m) for m in mels]), "mel-stats")


def _sqrtm_psd(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """``|m_a - m_b|^2 + tr(C_a + C_b - 2 (C_a C_b)^{1/2})`` between fitted Gaussians.

    The cross term is evaluated as ``tr((sqrt(C_a) C_b sqrt(C_a))^{1/2})``,
    which is symmetric and real. If either covariance is ill-conditioned a
    ridge of 1e-6 is added to both and a warning is emitted.
    """
    if a.dim != b.dim:
        raise ValueError(f"embedding dims differ: {a.dim} vs {b.dim}")
    ma, ca = a.moments()
    mb, cb = b.moments()
    if max(np.linalg.cond(ca), np.linalg.cond(cb)) > 1e12:
        warnings.warn(f"ill-conditioned covariance; adding ridge {FD_RIDGE}", RuntimeWarning, stacklevel=2)
        ridge = FD_RIDGE * np.eye(a.dim)
        ca, cb = ca + ridge, cb + ridge
    root_a = _sqrtm_psd(ca)
    cross = np.trace(_sqrtm_psd(root_a @ cb @ root_a))
    fd = float(np.sum((ma - mb) ** 2) + np.trace(ca) + np.trace(cb) - 2.0 * cross)
    if not math.isfinite(fd):
        raise FloatingPointError("Frechet distance is not finite")
    return max(fd, 0.0)


def _normalized(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    total = p.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"{name} sums to {total}, not 1")
    if abs(total - 1.0) > ROUNDING_TOL:
        warnings.warn(f"{name} sums to {total!r}; renormalizing", RuntimeWarning, stacklevel=3)
        p = p / total
    return p


def kl_divergence(p, q) -> float:
    """``sum p ln(p / q)`` in nats with ``0 ln 0 = 0`` and 1e-10 smoothing of ``q``."""
    p, q = _normalized(p, "p"), _normalized(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    q = np.maximum(q, KL_SMOOTHING)
    nz = p > 0
    return max(float(np.sum(p[nz] * np.log(p[nz] / q[nz]))), 0.0)


def mean_kl_divergence(p_rows: np.ndarray, q_rows: np.ndarray) -> float:
    """Average row-wise KL over paired sets of discrete distributions."""
    if p_rows.shape != q_rows.shape:
        raise ValueError(f"posterior matrices differ in shape: {p_rows.shape} vs {q_rows.shape}")
    return float(np.mean([kl_divergence(p, q) for p, q in zip(p_rows, q_rows)]))

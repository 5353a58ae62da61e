"""Monotonic alignment search, durations and duration-based expansion."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch

BRUTE_FORCE_MAX_TOKENS = 6
BRUTE_FORCE_MAX_FRAMES = 8


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentPath:
    """Frame-to-token map that is monotonic, unit-step and surjective."""

    frame_to_token: np.ndarray
    n_tokens: int

    def __post_init__(self):
        path = np.asarray(self.frame_to_token, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "frame_to_token", path)
        if path.size == 0:
            raise AlignmentError("empty alignment path")
        steps = np.diff(path)
        if path[0] != 0 or path[-1] != self.n_tokens - 1 or np.any((steps != 0) & (steps != 1)):
            raise AlignmentError(f"not a monotonic surjective path over {self.n_tokens} tokens: {path.tolist()}")

    @property
    def n_frames(self) -> int:
        return self.frame_to_token.shape[0]

    def to_text(self) -> str:
        return " ".join(str(int(i)) for i in self.frame_to_token)

    @classmethod
    def from_text(cls, text: str) -> AlignmentPath:
        path = np.array([int(v) for v in text.split()], dtype=np.int64)
        if path.size == 0:
            raise AlignmentError("empty alignment path")
        return cls(path, int(path[-1]) + 1)


@dataclass(frozen=True)
class DurationVector:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if counts.size == 0 or np.any(counts < 1):
            raise AlignmentError(f"durations must all be >= 1, got {counts.tolist()}")
        object.__setattr__(self, "counts", counts)

    @property
    def log_counts(self) -> np.ndarray:
        return np.log(self.counts.astype(np.float64))

    @property
    def n_frames(self) -> int:
        return int(self.counts.sum())


def gaussian_log_likelihood(mu_tokens: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Unit-variance Gaussian log-density of every frame under every token mean.

    ``mu_tokens`` is ``[n_tokens, d]`` and ``frames`` is ``[n_frames, d]``.
    The constant ``-d/2 log(2 pi)`` is kept so the values are true densities.
    """
    mu_tokens = np.asarray(mu_tokens, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    sq = (
        np.sum(mu_tokens**2, axis=1)[:, None]
        - 2.0 * mu_tokens @ frames.T
        + np.sum(frames**2, axis=1)[None, :]
    )
    d = mu_tokens.shape[1]
    return -0.5 * sq - 0.5 * d * np.log(2 * np.pi)


def path_score(log_lik: np.ndarray, path) -> float:
    path = np.asarray(getattr(path, "frame_to_token", path))
    return float(np.asarray(log_lik)[path, np.arange(path.size)].sum())


def mas_align(log_lik: np.ndarray) -> AlignmentPath:
    """Maximum-likelihood monotonic surjective alignment by dynamic programming.

    ``Q[i, j] = log_lik[i, j] + max(Q[i-1, j-1], Q[i, j-1])``; cells that
    cannot lie on a surjective path stay at ``-inf``. Backtracking keeps the
    current token whenever staying is at least as good as stepping down.
    """
    log_lik = np.asarray(log_lik, dtype=np.float64)
    if log_lik.ndim != 2:
        raise AlignmentError(f"log_lik must be 2-D, got shape {log_lik.shape}")
    n_tokens, n_frames = log_lik.shape
    if n_tokens < 1 or n_frames < n_tokens:
        raise AlignmentError(f"no surjective alignment of {n_tokens} tokens onto {n_frames} frames")
    if not np.all(np.isfinite(log_lik)):
        raise AlignmentError("log_lik contains non-finite entries")

    rows = np.arange(n_tokens)
    q = np.full((n_tokens, n_frames), -np.inf)
    q[0, 0] = log_lik[0, 0]
    for j in range(1, n_frames):
        prev = q[:, j - 1]
        down = np.concatenate(([-np.inf], prev[:-1]))
        q[:, j] = np.maximum(prev, down) + log_lik[:, j]
        # tokens after i each need one of the frames after j
        q[rows > j, j] = -np.inf
        q[rows < n_tokens - (n_frames - j), j] = -np.inf

    path = np.empty(n_frames, dtype=np.int64)
    i = n_tokens - 1
    path[-1] = i
    for j in range(n_frames - 1, 0, -1):
        if i > 0 and q[i - 1, j - 1] > q[i, j - 1]:
            i -= 1
        path[j - 1] = i
    return AlignmentPath(path, n_tokens)


def enumerate_paths(n_tokens: int, n_frames: int):
    """Yield every monotonic surjective path; there are C(n_frames-1, n_tokens-1)."""
    for steps in itertools.combinations(range(1, n_frames), n_tokens - 1):
        path = np.zeros(n_frames, dtype=np.int64)
        for s in steps:
            path[s:] += 1
        yield path


def brute_force_align(log_lik: np.ndarray) -> AlignmentPath:
    """Exhaustive reference for :func:`mas_align` on small instances.

    Among maximum-score paths, picks the one that is largest when compared
    from the last frame backwards, which is what stay-preferring
    backtracking returns.
    """
    log_lik = np.asarray(log_lik, dtype=np.float64)
    n_tokens, n_frames = log_lik.shape
    if n_tokens > BRUTE_FORCE_MAX_TOKENS or n_frames > BRUTE_FORCE_MAX_FRAMES:
        raise AlignmentError(
            f"instance {n_tokens}x{n_frames} exceeds brute-force budget "
            f"{BRUTE_FORCE_MAX_TOKENS}x{BRUTE_FORCE_MAX_FRAMES}"
        )
    if n_tokens < 1 or n_frames < n_tokens:
        raise AlignmentError(f"no surjective alignment of {n_tokens} tokens onto {n_frames} frames")
    best, best_key = None, None
    cols = np.arange(n_frames)
    for path in enumerate_paths(n_tokens, n_frames):
        score = log_lik[path, cols].sum()
        key = (score, tuple(path[::-1]))
        if best_key is None or key > best_key:
            best, best_key = path, key
    return AlignmentPath(best, n_tokens)


def durations_from_path(path: AlignmentPath, n_tokens: int | None = None) -> DurationVector:
    n_tokens = path.n_tokens if n_tokens is None else n_tokens
    if n_tokens != path.n_tokens:
        raise AlignmentError(f"path covers {path.n_tokens} tokens, expected {n_tokens}")
    return DurationVector(np.bincount(path.frame_to_token, minlength=n_tokens))


def path_from_durations(durations: DurationVector) -> AlignmentPath:
    counts = durations.counts
    return AlignmentPath(np.repeat(np.arange(counts.size), counts), counts.size)


def expand_by_durations(mu_tokens, durations):
    """Repeat row ``i`` of ``mu_tokens`` ``counts[i]`` times.

    Works on numpy arrays and torch tensors (gradients flow through the
    index select).
    """
    counts = durations.counts if isinstance(durations, DurationVector) else np.asarray(durations)
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts < 1):
        raise AlignmentError(f"durations must all be >= 1, got {counts.tolist()}")
    if counts.size != mu_tokens.shape[0]:
        raise AlignmentError(f"{counts.size} durations for {mu_tokens.shape[0]} tokens")
    index = np.repeat(np.arange(counts.size), counts)
    if isinstance(mu_tokens, np.ndarray):
        return mu_tokens[index]
    return mu_tokens.index_select(0, torch.as_tensor(index, device=mu_tokens.device))

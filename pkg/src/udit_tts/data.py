"""Corpus indexing (LJSpeech layout), synthetic corpus generation and feature caching."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import MelConfig, Waveform, compute_mel, load_wav, mel_band_edges, save_wav
from .text import SIL, Lexicon, PhonemeSequence, load_lexicon, text_to_phonemes

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusItem:
    uid: str
    audio_path: Path
    text: str


@dataclass(frozen=True)
class CorpusIndex:
    items: tuple[CorpusItem, ...]
    lexicon_path: Path | None = None

    def __post_init__(self):
        ids = [it.uid for it in self.items]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate utterance ids in corpus")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def parse_ljspeech_metadata(path, wav_dir=None) -> CorpusIndex:
    """Read a pipe-delimited ``id|raw|normalized`` file.

    Audio is expected at ``<wav_dir>/<id>.wav`` (default: ``wavs/`` next to
    the metadata file). Rows whose audio is missing are skipped with one
    warning that reports the count.
    """
    path = Path(path)
    wav_dir = Path(wav_dir) if wav_dir is not None else path.parent / "wavs"
    items, missing = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("|")
            if len(cols) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 '|'-separated columns, got {len(cols)}")
            uid, _, normalized = cols
            audio = wav_dir / f"{uid}.wav"
            if not audio.exists():
                missing += 1
                continue
            items.append(CorpusItem(uid, audio, normalized))
    if missing:
        logger.warning("skipped %d metadata rows with missing audio", missing)
    if not items:
        raise CorpusError("empty corpus")
    lexicon = path.parent / "lexicon.txt"
    return CorpusIndex(tuple(items), lexicon if lexicon.exists() else None)


# token -> (timbre kind, duration in frames); SIL is rendered like a token
SYNTHETIC_TOKENS = {
    "M": ("tone", 12),
    "N": ("tone", 10),
    "AA1": ("tone", 22),
    "UW1": ("tone", 20),
    "EH1": ("tone", 16),
    "IY1": ("tone", 18),
    SIL: ("noise", 8),
    "SH": ("noise", 15),
    "S": ("noise", 14),
}
_BANDS_PER_TOKEN = 8
_FIRST_BAND = 4
_LEVEL = 0.01
_NOISE_FLOOR = 2e-3
SYNTHETIC_WORDS = {
    "MAA": ("M", "AA1"),
    "SEE": ("S", "IY1"),
    "SHOO": ("SH", "UW1"),
    "NEH": ("N", "EH1"),
    "MISH": ("M", "IY1", "SH"),
    "NOOS": ("N", "UW1", "S"),
    "SAN": ("S", "AA1", "N"),
    "SHEM": ("SH", "EH1", "M"),
}


def synthetic_lexicon_text() -> str:
    lines = [";;; synthetic corpus lexicon (CMUdict format)"]
    lines += [f"{word}  {' '.join(phones)}" for word, phones in SYNTHETIC_WORDS.items()]
    return "\n".join(lines) + "\n"


def synthetic_lexicon() -> Lexicon:
    from .text import parse_lexicon

    return parse_lexicon(synthetic_lexicon_text().splitlines())


def synthetic_sentence(rng: np.random.Generator, min_words: int = 2, max_words: int = 4) -> str:
    words = list(SYNTHETIC_WORDS)
    n = int(rng.integers(min_words, max_words + 1))
    return " ".join(words[int(i)] for i in rng.integers(0, len(words), size=n)).capitalize() + "."


def synthetic_durations(seq: PhonemeSequence, token_frames=None) -> np.ndarray:
    """Generating frame count of every token (the ground-truth alignment)."""
    if token_frames is not None:
        return np.full(len(seq), int(token_frames), dtype=np.int64)
    return np.asarray([SYNTHETIC_TOKENS[s][1] for s in seq.symbols], dtype=np.int64)


def _token_bins(sym: str, cfg: MelConfig) -> np.ndarray:
    j = list(SYNTHETIC_TOKENS).index(sym)
    centers = mel_band_edges(cfg)[1:-1]
    lo = _FIRST_BAND + _BANDS_PER_TOKEN * j
    freqs = np.arange(cfg.fft_size // 2 + 1) * cfg.sample_rate / cfg.fft_size
    bins = np.nonzero((freqs >= centers[lo]) & (freqs <= centers[lo + _BANDS_PER_TOKEN - 1]))[0]
    return bins[::4] if SYNTHETIC_TOKENS[sym][0] == "tone" else bins


def _timbre(sym: str, n: int, cfg: MelConfig) -> np.ndarray:
    """Stationary comb of sines occupying the token's own block of mel bands.

    Tone tokens use every fourth FFT bin of the block (at 4x amplitude),
    noise tokens every bin with frozen random phases. The signal repeats every
    ``fft_size`` samples, so all interior frames of a token have the same
    spectrum and every token has the same per-band level. Raised-cosine fades
    of one hop at both ends keep onsets from splattering into other bands.
    """
    bins = _token_bins(sym, cfg)
    gain = 4.0 if SYNTHETIC_TOKENS[sym][0] == "tone" else 1.0
    phases = np.random.default_rng(list(SYNTHETIC_TOKENS).index(sym)).uniform(0, 2 * np.pi, len(bins))
    t = np.arange(n)
    x = gain * _LEVEL * np.sin(2 * np.pi * np.outer(bins, t) / cfg.fft_size + phases[:, None]).sum(axis=0)
    fade = min(cfg.hop_length, n // 2)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    x[:fade] *= ramp
    x[n - fade :] *= ramp[::-1]
    return x


def render_synthetic(seq: PhonemeSequence, rng: np.random.Generator, cfg: MelConfig = MelConfig(), token_frames=None):
    """Render a phoneme sequence to audio with frame-exact token boundaries.

    Token boundaries sit half a hop before frame centers, so every mel frame
    is centered inside exactly one token and the clip has ``sum(durations)``
    frames. ``rng`` drives only the low broadband noise floor. Returns
    ``(waveform, durations)``.
    """
    hop = cfg.hop_length
    durations = synthetic_durations(seq, token_frames)
    bounds = np.concatenate(([0], np.cumsum(durations))) * hop - hop // 2
    bounds[0] = 0
    x = _NOISE_FLOOR * rng.standard_normal(int(bounds[-1]))
    for sym, a, b in zip(seq.symbols, bounds[:-1], bounds[1:]):
        x[a:b] += _timbre(sym, int(b - a), cfg)
    return Waveform(np.clip(x, -1.0, 1.0), cfg.sample_rate), durations


def generate_synthetic_corpus(n_items: int, seed: int, out_dir, cfg: MelConfig = MelConfig(), token_frames=None) -> CorpusIndex:
    """Write ``n_items`` synthetic clips plus ``metadata.csv`` and ``lexicon.txt`` in LJSpeech layout."""
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    out_dir = Path(out_dir)
    try:
        (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
        (out_dir / "lexicon.txt").write_text(synthetic_lexicon_text(), encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot write synthetic corpus to {out_dir}: {exc}") from exc
    lex = synthetic_lexicon()
    rng = np.random.default_rng(seed)
    rows, items = [], []
    for k in range(n_items):
        uid = f"SYN{seed:03d}-{k:04d}"
        text = synthetic_sentence(rng)
        wave, _ = render_synthetic(text_to_phonemes(text, lex), rng, cfg, token_frames)
        path = out_dir / "wavs" / f"{uid}.wav"
        save_wav(path, wave)
        rows.append(f"{uid}|{text}|{text}")
        items.append(CorpusItem(uid, path, text))
    (out_dir / "metadata.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return CorpusIndex(tuple(items), out_dir / "lexicon.txt")


@dataclass
class Utterance:
    uid: str
    phonemes: PhonemeSequence
    mel: np.ndarray  # [n_mels, n_frames]

    @property
    def n_frames(self) -> int:
        return self.mel.shape[1]


def corpus_lexicon(corpus: CorpusIndex, path=None) -> Lexicon:
    if path is not None:
        return load_lexicon(path)
    return load_lexicon(corpus.lexicon_path) if corpus.lexicon_path else load_lexicon()


def build_features(corpus: CorpusIndex, lex: Lexicon, cfg: MelConfig = MelConfig()) -> list[Utterance]:
    out = []
    for item in corpus:
        wave = load_wav(item.audio_path, cfg.sample_rate)
        mel = compute_mel(wave, cfg).values.astype(np.float32)
        out.append(Utterance(item.uid, text_to_phonemes(item.text, lex), mel))
    return out


def save_feature_cache(path, utterances: list[Utterance]) -> None:
    arrays = {}
    for k, u in enumerate(utterances):
        arrays[f"mel_{k}"] = u.mel
        arrays[f"tok_{k}"] = np.asarray(u.phonemes.tokens, dtype=np.int64)
    arrays["uids"] = np.array([u.uid for u in utterances])
    arrays["symbols"] = np.array(["\t".join(u.phonemes.symbols) for u in utterances])
    np.savez(os.fspath(path), **arrays)


def load_feature_cache(path) -> list[Utterance]:
    with np.load(os.fspath(path)) as data:
        uids = data["uids"].tolist()
        symbols = data["symbols"].tolist()
        return [
            Utterance(uid, PhonemeSequence(tuple(int(v) for v in data[f"tok_{k}"]), tuple(symbols[k].split("\t"))), data[f"mel_{k}"])
            for k, uid in enumerate(uids)
        ]


def dataset_mel_mean(utterances: list[Utterance]) -> float:
    total = sum(float(u.mel.sum()) for u in utterances)
    count = sum(u.mel.size for u in utterances)
    return total / count

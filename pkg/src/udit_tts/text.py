"""CMU-dictionary phonemization and inference-time segmentation."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

PAD, SIL, UNK = "PAD", "SIL", "UNK"
SPECIAL_SYMBOLS = (PAD, SIL, UNK)

# fmt: off
ARPABET = (
    "AA", "AA0", "AA1", "AA2", "AE", "AE0", "AE1", "AE2", "AH", "AH0", "AH1", "AH2",
    "AO", "AO0", "AO1", "AO2", "AW", "AW0", "AW1", "AW2", "AY", "AY0", "AY1", "AY2",
    "B", "CH", "D", "DH", "EH", "EH0", "EH1", "EH2", "ER", "ER0", "ER1", "ER2",
    "EY", "EY0", "EY1", "EY2", "F", "G", "HH", "IH", "IH0", "IH1", "IH2",
    "IY", "IY0", "IY1", "IY2", "JH", "K", "L", "M", "N", "NG",
    "OW", "OW0", "OW1", "OW2", "OY", "OY0", "OY1", "OY2", "P", "R", "S", "SH",
    "T", "TH", "UH", "UH0", "UH1", "UH2", "UW", "UW0", "UW1", "UW2",
    "V", "W", "Y", "Z", "ZH",
)
# fmt: on

DEFAULT_VOCAB = SPECIAL_SYMBOLS + ARPABET

_DIGITS = ("ZERO", "ONE", "TWO", "THREE", "FOUR", "FIVE", "SIX", "SEVEN", "EIGHT", "NINE")
_VARIANT = re.compile(r"^(.+)\(\d+\)$")
# braces hold literal phoneme symbols, as produced by PhonemeSequence.render
_TOKEN = re.compile(r"\{[^}]*\}|[A-Z0-9']+|[.,!?;:\-\u2014()\"]")


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class Lexicon:
    entries: dict[str, tuple[str, ...]]
    phoneme_vocab: tuple[str, ...] = DEFAULT_VOCAB
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.phoneme_vocab)) != len(self.phoneme_vocab):
            raise LexiconError("phoneme vocabulary has duplicate symbols")
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.phoneme_vocab)})
        for word, phones in self.entries.items():
            bad = [p for p in phones if p not in self.index]
            if bad:
                raise LexiconError(f"entry {word!r} uses unknown phonemes {bad}")

    @property
    def vocab_size(self) -> int:
        return len(self.phoneme_vocab)

    def __contains__(self, word: str) -> bool:
        return word in self.entries


@dataclass(frozen=True)
class PhonemeSequence:
    tokens: tuple[int, ...]
    symbols: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("phoneme sequence is empty")
        if len(self.tokens) != len(self.symbols):
            raise ValueError("tokens and symbols differ in length")

    @classmethod
    def from_symbols(cls, symbols, vocab=DEFAULT_VOCAB) -> PhonemeSequence:
        index = {s: i for i, s in enumerate(vocab)}
        try:
            tokens = tuple(index[s] for s in symbols)
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in vocabulary") from None
        return cls(tokens, tuple(symbols))

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, item: slice) -> PhonemeSequence:
        return PhonemeSequence(self.tokens[item], self.symbols[item])

    def render(self) -> str:
        """Literal form that ``text_to_phonemes`` maps back to this sequence."""
        return "{" + " ".join(self.symbols) + "}"


def parse_lexicon(lines, vocab=DEFAULT_VOCAB) -> Lexicon:
    index = set(vocab)
    entries: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise LexiconError(f"line {lineno}: expected 'WORD PH1 PH2 ...', got {raw.rstrip()!r}")
        word, phones = parts[0].upper(), tuple(parts[1:])
        unknown = [p for p in phones if p not in index]
        if unknown:
            raise LexiconError(f"line {lineno}: unknown phonemes {unknown} for {word!r}")
        m = _VARIANT.match(word)
        if m:
            word = m.group(1)
        entries.setdefault(word, phones)
    if not entries:
        raise LexiconError("empty lexicon")
    return Lexicon(entries, tuple(vocab))


def load_lexicon(path=None, vocab=DEFAULT_VOCAB) -> Lexicon:
    """Load a CMUdict-format file; ``None`` loads the full CMU dictionary."""
    if path is None:
        import cmudict

        with cmudict.dict_stream() as fh:
            return parse_lexicon((line.decode("utf-8") for line in fh), vocab)
    path = os.fspath(path)
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_lexicon(fh, vocab)


def _spell(word: str, lex: Lexicon) -> list[str]:
    phones: list[str] = []
    for ch in word:
        if ch.isdigit():
            phones.extend(lex.entries.get(_DIGITS[int(ch)], (UNK,)))
            continue
        entry = lex.entries.get(ch + ".") or lex.entries.get(ch)
        phones.extend(entry if entry else (UNK,))
    return phones


def _word_phonemes(word: str, lex: Lexicon) -> list[str]:
    if word in lex.entries:
        return list(lex.entries[word])
    if word.isdigit():
        out: list[str] = []
        for ch in word:
            out.extend(lex.entries.get(_DIGITS[int(ch)], (UNK,)))
        return out
    stripped = word.strip("'")
    if stripped in lex.entries:
        return list(lex.entries[stripped])
    return _spell(stripped.replace("'", ""), lex) or [UNK]


def text_to_phonemes(text: str, lex: Lexicon) -> PhonemeSequence:
    """Phonemize text with dictionary lookup.

    Words are separated by SIL; sentence punctuation also becomes SIL and
    consecutive SILs collapse to one. Out-of-vocabulary words are spelled
    letter by letter, with UNK for anything unspellable.
    """
    if text is None or not text.strip():
        raise ValueError("empty text")
    symbols: list[str] = []

    def push_sil():
        if symbols and symbols[-1] != SIL:
            symbols.append(SIL)

    prev_word = False
    for tok in _TOKEN.findall(text.upper()):
        if tok.startswith("{"):
            literal = tok[1:-1].split()
            if prev_word and literal and literal[0] != SIL:
                push_sil()
            for sym in literal:
                if sym == SIL:
                    push_sil()
                else:
                    symbols.append(sym if sym in lex.index else UNK)
            prev_word = bool(literal) and literal[-1] != SIL
        elif tok[0].isalnum() or tok[0] == "'":
            if not tok.strip("'"):
                continue
            if prev_word:
                push_sil()
            symbols.extend(_word_phonemes(tok, lex))
            prev_word = True
        else:
            push_sil()
            prev_word = False
    if not symbols:
        raise ValueError(f"no phonemes produced for {text!r}")
    return PhonemeSequence(tuple(lex.index[s] for s in symbols), tuple(symbols))


def segment_phonemes(seq: PhonemeSequence, min_len: int = 22, max_len: int = 25) -> list[PhonemeSequence]:
    """Split into chunks of at most ``max_len`` tokens.

    Each cut goes right after the SIL closest to ``max_len`` inside the window
    ``[min_len, max_len]``; without such a SIL the chunk is filled to
    ``max_len``. Input shorter than ``max_len`` is returned whole.
    """
    if not 1 <= min_len <= max_len:
        raise ValueError(f"need 1 <= min_len <= max_len, got {min_len}, {max_len}")
    segments = []
    start, n = 0, len(seq)
    while n - start > max_len:
        cut = start + max_len
        for length in range(max_len, min_len - 1, -1):
            if seq.symbols[start + length - 1] == SIL:
                cut = start + length
                break
        segments.append(seq[start:cut])
        start = cut
    segments.append(seq[start:])
    return segments

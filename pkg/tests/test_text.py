import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udit_tts.text import (
    DEFAULT_VOCAB,
    SIL,
    UNK,
    LexiconError,
    PhonemeSequence,
    load_lexicon,
    parse_lexicon,
    segment_phonemes,
    text_to_phonemes,
)

LEXICON_LINES = [
    ";;; test lexicon",
    "HELLO  HH AH0 L OW1",
    "WORLD  W ER1 L D",
    "READ  R IY1 D",
    "READ(2)  R EH1 D",
    "A.  EY1",
    "B.  B IY1",
    "ONE  W AH1 N",
    "TWO  T UW1  # trailing comment",
]


@pytest.fixture(scope="module")
def lex():
    return parse_lexicon(LEXICON_LINES)


@pytest.fixture(scope="module")
def cmu():
    return load_lexicon()


class TestVocabulary:
    def test_layout(self):
        assert DEFAULT_VOCAB[:3] == ("PAD", "SIL", "UNK")
        assert len(DEFAULT_VOCAB) == 87
        assert len(set(DEFAULT_VOCAB)) == len(DEFAULT_VOCAB)


class TestParseLexicon:
    def test_variants_keep_first(self, lex):
        assert lex.entries["READ"] == ("R", "IY1", "D")

    def test_comment_stripped(self, lex):
        assert lex.entries["TWO"] == ("T", "UW1")

    def test_empty(self):
        with pytest.raises(LexiconError, match="empty lexicon"):
            parse_lexicon([";;; nothing", ""])

    def test_malformed_reports_line(self):
        with pytest.raises(LexiconError, match="line 2"):
            parse_lexicon(["HELLO HH AH0", "BROKEN"])

    def test_unknown_phoneme(self):
        with pytest.raises(LexiconError, match="unknown phonemes"):
            parse_lexicon(["X  QQ"])

    def test_cmudict_loads(self, cmu):
        assert len(cmu.entries) > 100_000
        assert cmu.entries["HELLO"] == ("HH", "AH0", "L", "OW1")


class TestTextToPhonemes:
    def test_hello_world(self, lex):
        seq = text_to_phonemes("Hello world", lex)
        assert seq.symbols == ("HH", "AH0", "L", "OW1", SIL, "W", "ER1", "L", "D")

    def test_punctuation_becomes_single_sil(self, lex):
        seq = text_to_phonemes("Hello, , world.", lex)
        assert seq.symbols == ("HH", "AH0", "L", "OW1", SIL, "W", "ER1", "L", "D", SIL)

    def test_no_leading_sil(self, lex):
        assert text_to_phonemes("... hello", lex).symbols[0] == "HH"

    def test_oov_spelled(self, lex):
        assert text_to_phonemes("AB", lex).symbols == ("EY1", "B", "IY1")

    def test_unspellable_is_unk(self, lex):
        assert text_to_phonemes("Q", lex).symbols == (UNK,)

    def test_digits(self, lex):
        assert text_to_phonemes("12", lex).symbols == ("W", "AH1", "N", "T", "UW1")

    def test_empty(self, lex):
        with pytest.raises(ValueError, match="empty text"):
            text_to_phonemes("   ", lex)

    def test_tokens_match_vocab(self, lex):
        seq = text_to_phonemes("hello world", lex)
        assert all(DEFAULT_VOCAB[t] == s for t, s in zip(seq.tokens, seq.symbols))

    def test_literal_round_trip(self, lex):
        seq = text_to_phonemes("hello, world", lex)
        assert text_to_phonemes(seq.render(), lex) == seq

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(["hello", "world", "read", "two", ",", ".", "ab"]), min_size=1, max_size=12))
    def test_render_idempotent(self, lex, words):
        text = " ".join(words)
        if all(w in ",." for w in words):
            return
        seq = text_to_phonemes(text, lex)
        assert text_to_phonemes(seq.render(), lex) == seq
        assert SIL + " " + SIL not in " ".join(seq.symbols)


class TestSegmentation:
    def _seq(self, symbols):
        return PhonemeSequence.from_symbols(symbols)

    def test_short_input_whole(self):
        seq = self._seq(["AA1"] * 10)
        assert segment_phonemes(seq) == [seq]

    def test_cut_after_sil_in_window(self):
        symbols = ["AA1"] * 22 + [SIL] + ["IY1"] * 10
        segs = segment_phonemes(self._seq(symbols))
        assert [len(s) for s in segs] == [23, 10]
        assert segs[0].symbols[-1] == SIL

    def test_prefers_sil_nearest_max(self):
        symbols = ["AA1"] * 21 + [SIL] + ["AA1"] * 2 + [SIL] + ["IY1"] * 5
        assert len(segment_phonemes(self._seq(symbols))[0]) == 25

    def test_hard_cut_without_sil(self):
        segs = segment_phonemes(self._seq(["AA1"] * 60))
        assert [len(s) for s in segs] == [25, 25, 10]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from(["AA1", "IY1", SIL]), min_size=1, max_size=120))
    def test_partition_invariants(self, symbols):
        seq = self._seq(symbols)
        segs = segment_phonemes(seq)
        assert sum((s.symbols for s in segs), ()) == seq.symbols
        assert all(len(s) <= 25 for s in segs)
        assert all(len(s) >= 22 for s in segs[:-1])

    def test_bad_window(self):
        with pytest.raises(ValueError):
            segment_phonemes(self._seq(["AA1"]), 30, 25)

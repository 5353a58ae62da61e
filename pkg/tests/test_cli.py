import csv
import logging

import numpy as np
import pytest
import torch

from udit_tts.alignment import durations_from_path, gaussian_log_likelihood, mas_align
from udit_tts.audio import MelConfig, compute_mel
from udit_tts.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from udit_tts.cli import run_cli
from udit_tts.config import SCHEMA, ConfigError, read_config_file, resolve_config
from udit_tts.data import (
    CorpusError,
    generate_synthetic_corpus,
    load_feature_cache,
    parse_ljspeech_metadata,
    render_synthetic,
    save_feature_cache,
    synthetic_durations,
    synthetic_lexicon,
)
from udit_tts.matrix_io import MatrixFormatError, read_matrix, write_matrix
from udit_tts.text import PhonemeSequence, text_to_phonemes


class TestMetadata:
    def _write(self, tmp_path, text, wavs=("LJ001-0001",)):
        (tmp_path / "wavs").mkdir(exist_ok=True)
        for uid in wavs:
            (tmp_path / "wavs" / f"{uid}.wav").write_bytes(b"")
        p = tmp_path / "metadata.csv"
        p.write_text(text, encoding="utf-8")
        return p

    def test_example_line(self, tmp_path):
        corpus = parse_ljspeech_metadata(self._write(tmp_path, "LJ001-0001|text|Text.\n"))
        (item,) = corpus.items
        assert item.uid == "LJ001-0001"
        assert item.audio_path == tmp_path / "wavs" / "LJ001-0001.wav"
        assert item.text == "Text."

    def test_empty_file(self, tmp_path):
        with pytest.raises(CorpusError, match="empty corpus"):
            parse_ljspeech_metadata(self._write(tmp_path, ""))

    def test_two_columns(self, tmp_path):
        with pytest.raises(CorpusError, match=":2:"):
            parse_ljspeech_metadata(self._write(tmp_path, "LJ001-0001|a|A.\nLJ001-0002|b\n"))

    def test_missing_audio_skipped(self, tmp_path, caplog):
        text = "LJ001-0001|a|A.\nLJ001-0002|b|B.\nLJ001-0003|c|C.\n"
        with caplog.at_level(logging.WARNING):
            corpus = parse_ljspeech_metadata(self._write(tmp_path, text))
        assert len(corpus) == 1
        assert "skipped 2" in caplog.text

    def test_duplicate_ids(self, tmp_path):
        with pytest.raises(CorpusError, match="duplicate"):
            parse_ljspeech_metadata(self._write(tmp_path, "LJ001-0001|a|A.\nLJ001-0001|a|A.\n"))


class TestSyntheticCorpus:
    def test_deterministic(self, tmp_path):
        a = generate_synthetic_corpus(4, 7, tmp_path / "a")
        b = generate_synthetic_corpus(4, 7, tmp_path / "b")
        assert (tmp_path / "a" / "metadata.csv").read_bytes() == (tmp_path / "b" / "metadata.csv").read_bytes()
        for x, y in zip(a, b):
            assert x.audio_path.read_bytes() == y.audio_path.read_bytes()

    def test_seed_changes_content(self, tmp_path):
        a = generate_synthetic_corpus(2, 7, tmp_path / "a")
        b = generate_synthetic_corpus(2, 8, tmp_path / "b")
        assert a.items[0].audio_path.read_bytes() != b.items[0].audio_path.read_bytes()

    def test_frame_count_arithmetic(self, rng):
        seq = PhonemeSequence.from_symbols(["M", "AA1", "S", "IY1", "N"])
        wave, durations = render_synthetic(seq, rng, token_frames=20)
        assert durations.tolist() == [20] * 5
        assert compute_mel(wave).n_frames == 100

    def test_oracle_means_recover_durations(self, synthetic_utterances):
        # pool ground-truth frames per token symbol into oracle means
        sums, counts = {}, {}
        truth = [synthetic_durations(u.phonemes) for u in synthetic_utterances]
        for u, d in zip(synthetic_utterances, truth):
            assert u.n_frames == d.sum()
            for sym, seg in zip(u.phonemes.symbols, np.split(u.mel, np.cumsum(d)[:-1], axis=1)):
                sums[sym] = sums.get(sym, 0) + seg.sum(axis=1)
                counts[sym] = counts.get(sym, 0) + seg.shape[1]
        means = {s: sums[s] / counts[s] for s in sums}
        for u, d in zip(synthetic_utterances, truth):
            mu = np.stack([means[s] for s in u.phonemes.symbols])
            got = durations_from_path(mas_align(gaussian_log_likelihood(mu, u.mel.T)))
            np.testing.assert_array_equal(got.counts, d)

    def test_lexicon_written(self, synthetic_dir):
        corpus = parse_ljspeech_metadata(synthetic_dir / "metadata.csv")
        assert corpus.lexicon_path == synthetic_dir / "lexicon.txt"
        text_to_phonemes(corpus.items[0].text, synthetic_lexicon())

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(CorpusError, match="cannot write"):
            generate_synthetic_corpus(1, 0, blocker / "sub")

    def test_feature_cache_round_trip(self, synthetic_utterances, tmp_path):
        save_feature_cache(tmp_path / "f.npz", synthetic_utterances[:3])
        back = load_feature_cache(tmp_path / "f.npz")
        for a, b in zip(synthetic_utterances[:3], back):
            assert a.uid == b.uid and a.phonemes == b.phonemes
            np.testing.assert_array_equal(a.mel, b.mel)


def _three_values(key):
    parser = SCHEMA[key][1]
    if parser is int:
        return "3", "5", "7"
    if parser is float:
        return "0.25", "0.5", "0.75"
    if key in ("channels", "patch_size"):
        return "1,2", "3,4", "5,6"
    if key == "attention":
        return "false", "true", "false"
    if key == "model_size":
        return "full", "tiny", "full"
    return "float64", "float32", "float64"


class TestConfig:
    @pytest.mark.parametrize("key", list(SCHEMA))
    def test_precedence(self, key, tmp_path):
        file_v, env_v, flag_v = _three_values(key)
        section = SCHEMA[key][0]
        path = tmp_path / "c.ini"
        path.write_text(f"[{section}]\n{key} = {file_v}\n")
        parse = lambda v: resolve_config(flags={key: v})[key]
        env = {f"UDIT_{key.upper()}": env_v}

        assert resolve_config(path, env={}).sources[key] == "file " + str(path)
        assert resolve_config(path, env={})[key] == parse(file_v)
        assert resolve_config(path, env=env)[key] == parse(env_v)
        assert resolve_config(path, env=env, flags={key: flag_v})[key] == parse(flag_v)
        assert resolve_config(path, env=env, flags={key: flag_v}).sources[key] == "flag"
        assert resolve_config(env={}).sources[key] == "default"

    def test_unknown_file_key(self, tmp_path):
        (tmp_path / "c.ini").write_text("[train]\nbogus = 1\n")
        with pytest.raises(ConfigError, match="unknown key"):
            read_config_file(tmp_path / "c.ini")

    def test_wrong_section(self, tmp_path):
        (tmp_path / "c.ini").write_text("[mel]\ntau = 1\n")
        with pytest.raises(ConfigError, match=r"belongs in \[synth\]"):
            read_config_file(tmp_path / "c.ini")

    def test_unknown_env_ignored(self, caplog):
        with caplog.at_level(logging.WARNING):
            cfg = resolve_config(env={"UDIT_BOGUS": "1"})
        assert "UDIT_BOGUS" in caplog.text and cfg["tau"] == 1.5

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value"):
            resolve_config(env={}, flags={"batch_size": "four"})

    def test_builders(self):
        cfg = resolve_config(env={}, flags={"frame_crop": "64", "tau": "2.0", "n_dit_blocks": "1"})
        assert cfg.training().frame_crop == 64
        assert cfg.synthesis().frame_budget == 64 and cfg.synthesis().tau == 2.0
        assert cfg.model(87).decoder.n_frames == 64 and cfg.model(87).decoder.n_dit_blocks == 1
        assert cfg.mel() == MelConfig()
        assert "tau = 2.0  # flag" in cfg.render()


class TestMatrixIO:
    @pytest.mark.parametrize("width", [4, 8])
    def test_round_trip(self, tmp_path, rng, width):
        m = rng.normal(size=(5, 7))
        write_matrix(tmp_path / "m.mat", m, width)
        raw = (tmp_path / "m.mat").read_bytes()
        assert raw[:4] == b"UDMX" and len(raw) == 16 + 35 * width
        back = read_matrix(tmp_path / "m.mat")
        np.testing.assert_array_equal(back, m.astype(np.float32 if width == 4 else np.float64))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.mat").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(MatrixFormatError, match="magic"):
            read_matrix(tmp_path / "m.mat")

    def test_truncated_payload(self, tmp_path):
        write_matrix(tmp_path / "m.mat", np.zeros((3, 3)))
        data = (tmp_path / "m.mat").read_bytes()
        (tmp_path / "m.mat").write_bytes(data[:-4])
        with pytest.raises(MatrixFormatError, match="payload"):
            read_matrix(tmp_path / "m.mat")

    def test_bad_width(self, tmp_path):
        with pytest.raises(ValueError):
            write_matrix(tmp_path / "m.mat", np.zeros((2, 2)), width=2)


class TestCheckpoint:
    def test_bit_identical_round_trip(self, tiny_checkpoint, tmp_path):
        save_checkpoint(tmp_path / "c.ckpt", tiny_checkpoint)
        back = load_checkpoint(tmp_path / "c.ckpt")
        assert back.params.keys() == tiny_checkpoint.params.keys()
        for k, v in tiny_checkpoint.params.items():
            assert back.params[k].dtype == v.dtype
            assert back.params[k].numpy().tobytes() == v.numpy().tobytes()
        assert back.model_config == tiny_checkpoint.model_config
        assert back.train_config == tiny_checkpoint.train_config
        assert back.mel_mean == tiny_checkpoint.mel_mean and back.step == tiny_checkpoint.step
        assert back.lexicon().entries == synthetic_lexicon().entries
        assert torch.equal(back.rng_state, tiny_checkpoint.rng_state)
        for idx, st in tiny_checkpoint.optimizer_state["state"].items():
            for key, val in st.items():
                assert torch.equal(back.optimizer_state["state"][idx][key], val)

    def test_resave_is_byte_identical(self, tiny_checkpoint, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", tiny_checkpoint)
        save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(tmp_path / "a.ckpt"))
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.ckpt").write_bytes(b"NOTACKPT" + bytes(12))
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(tmp_path / "c.ckpt")

    def test_truncated_block(self, tiny_checkpoint, tmp_path):
        save_checkpoint(tmp_path / "c.ckpt", tiny_checkpoint)
        data = (tmp_path / "c.ckpt").read_bytes()
        assert data[:8] == MAGIC
        (tmp_path / "c.ckpt").write_bytes(data[:-100])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "c.ckpt")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic corpus, a 2-step checkpoint and a WAV rendered from it."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run_cli(["prepare-data", "--synthetic", "8", "--out", str(data), "--seed", "2"]) == 0
    ckpt = root / "model.ckpt"
    assert run_cli(["train", "--data-dir", str(data), "--steps", "2", "--out", str(ckpt), "--set", "frame_crop=64"]) == 0
    return root, data, ckpt


FAST = ["--set", "griffin_lim_iters=4", "--n-steps", "3"]


class TestCommands:
    def test_prepare_outputs(self, workspace):
        _, data, _ = workspace
        assert len(load_feature_cache(data / "features.npz")) == 8
        assert (data / "lexicon.txt").exists()

    def test_train_log(self, workspace):
        root, _, _ = workspace
        rows = list(csv.DictReader(open(root / "model.log.csv")))
        assert [int(r["step"]) for r in rows] == [1, 2]

    def test_resume_continues_step_count(self, workspace, tmp_path):
        _, data, ckpt = workspace
        out = tmp_path / "resumed.ckpt"
        assert run_cli(["train", "--data-dir", str(data), "--steps", "1", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        assert load_checkpoint(out).step == 3

    def test_synth_byte_identical(self, workspace, tmp_path):
        _, _, ckpt = workspace
        for name in ("a.wav", "b.wav"):
            argv = ["synth", "--checkpoint", str(ckpt), "--text", "hello", "--seed", "3", "--out", str(tmp_path / name)]
            assert run_cli(argv + FAST) == 0
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

    def test_synth_dump_mels(self, workspace, tmp_path):
        _, _, ckpt = workspace
        argv = ["synth", "--checkpoint", str(ckpt), "--text", "Maa see.", "--out", str(tmp_path / "o.wav"), "--dump-mels", str(tmp_path / "mels")]
        assert run_cli(argv + FAST) == 0
        m = read_matrix(tmp_path / "mels" / "segment_000.mat")
        assert m.shape[0] == 80 and np.all(np.isfinite(m))

    def test_sweep_rows(self, workspace, tmp_path):
        _, _, ckpt = workspace
        out = tmp_path / "sweep.csv"
        argv = ["sweep", "--checkpoint", str(ckpt), "--param", "n_steps", "--values", "1,2,3,4", "--text", "Maa.", "--out", str(out)]
        assert run_cli(argv + ["--set", "griffin_lim_iters=2"]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [int(r["n_steps"]) for r in rows] == [1, 2, 3, 4]
        assert len({r["n_frames"] for r in rows}) == 1

    # 8 clips cannot give a full-rank 160-d covariance
    @pytest.mark.filterwarnings("ignore:ill-conditioned covariance")
    def test_eval(self, workspace, tmp_path):
        _, data, _ = workspace
        out = tmp_path / "eval.csv"
        wavs = str(data / "wavs")
        assert run_cli(["eval", "--ref-dir", wavs, "--gen-dir", wavs, "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert rows[0].keys() == {"metric", "item", "value"}
        assert all(float(r["value"]) == pytest.approx(0.0, abs=1e-6) for r in rows)
        assert {r["metric"] for r in rows} == {"lsd", "fd"}

    # 8 clips cannot give a full-rank 160-d covariance
    @pytest.mark.filterwarnings("ignore:ill-conditioned covariance")
    def test_eval_with_posteriors(self, workspace, tmp_path):
        _, data, _ = workspace
        write_matrix(tmp_path / "p.mat", np.array([[0.5, 0.5]]), 8)
        write_matrix(tmp_path / "q.mat", np.array([[0.25, 0.75]]), 8)
        out = tmp_path / "eval.csv"
        wavs = str(data / "wavs")
        argv = ["eval", "--ref-dir", wavs, "--gen-dir", wavs, "--ref-posteriors", str(tmp_path / "p.mat"), "--gen-posteriors", str(tmp_path / "q.mat"), "--out", str(out)]
        assert run_cli(argv) == 0
        kld = [r for r in csv.DictReader(open(out)) if r["metric"] == "kld"]
        assert float(kld[0]["value"]) == pytest.approx(0.1438, abs=1e-4)

    def test_verify_math(self, capsys):
        assert run_cli(["verify-math", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and out.count("PASS") == 7

    def test_unknown_subcommand(self):
        assert run_cli(["frobnicate"]) == 2

    def test_unknown_flag(self):
        assert run_cli(["verify-math", "--bogus"]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert run_cli(["synth", "--checkpoint", str(tmp_path / "nope"), "--text", "a", "--out", str(tmp_path / "o.wav")]) == 1

    def test_bad_set(self, workspace, tmp_path):
        _, _, ckpt = workspace
        argv = ["synth", "--checkpoint", str(ckpt), "--text", "a", "--out", str(tmp_path / "o.wav"), "--set", "nonsense"]
        assert run_cli(argv) == 1

"""Command-line entry point: ``udit-tts <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .audio import compute_mel, load_wav, save_wav
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, resolve_config
from .data import (
    build_features,
    corpus_lexicon,
    dataset_mel_mean,
    generate_synthetic_corpus,
    load_feature_cache,
    parse_ljspeech_metadata,
    save_feature_cache,
)
from .evaluation import EmbeddingSet, frechet_distance, lsd, mean_kl_divergence, mel_stats_embeddings
from .inference import SynthesisConfig, Synthesizer
from .matrix_io import read_matrix, write_matrix
from .networks import UDiTTTS
from .text import DEFAULT_VOCAB, load_lexicon
from .training import Trainer
from .verify import run_math_checks

logger = logging.getLogger("udit_tts")

FEATURES_FILE = "features.npz"
LEXICON_FILE = "lexicon.txt"


def _common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--device-precision", choices=("float32", "float64"), help="floating-point precision")
    if seed:
        p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udit-tts", description="U-DiT diffusion text-to-speech")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("prepare-data", help="index a corpus and cache its mel features")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data-dir", help="LJSpeech-layout directory with metadata.csv and wavs/")
    src.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic clips into --out")
    p.add_argument("--out", help="output directory (default: the data directory)")
    p.add_argument("--lexicon", help="pronunciation dictionary (default: lexicon.txt in the corpus, else CMUdict)")

    p = sub.add_parser("train", help="train on a prepared corpus")
    _common(p)
    p.add_argument("--data-dir", required=True, help="directory produced by prepare-data")
    p.add_argument("--steps", type=int, help="number of optimizer steps to run")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path to write")

    p = sub.add_parser("synth", help="synthesize text to a WAV file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    text = p.add_mutually_exclusive_group(required=True)
    text.add_argument("--text")
    text.add_argument("--text-file")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--tau", type=float)
    p.add_argument("--n-steps", type=int, help="reverse ODE steps")
    p.add_argument("--dump-mels", help="directory for per-segment mel matrix files")

    p = sub.add_parser("eval", help="objective metrics over paired WAV directories")
    _common(p, seed=False)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--ref-embeddings", help="matrix file of reference embeddings (overrides mel statistics)")
    p.add_argument("--gen-embeddings", help="matrix file of generated embeddings")
    p.add_argument("--ref-posteriors", help="matrix file of reference class posteriors (one row per clip)")
    p.add_argument("--gen-posteriors", help="matrix file of generated class posteriors")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("verify-math", help="run the diffusion and alignment oracle checks")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="vary n_steps or tau and tabulate outputs")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--param", required=True, choices=("n_steps", "tau"))
    p.add_argument("--values", required=True, help="comma-separated grid")
    p.add_argument("--text", required=True)
    p.add_argument("--reference", help="WAV to score every output against with LSD")
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _resolve(args):
    flags = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        flags[key.strip()] = value.strip()
    for key, attr in (("seed", "seed"), ("steps", "steps"), ("tau", "tau"), ("n_steps", "n_steps"), ("precision", "device_precision")):
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    cfg = resolve_config(args.config, flags=flags)
    logger.info("resolved config (seed=%s):\n%s", cfg["seed"], cfg.render())
    return cfg


def cmd_prepare_data(args) -> int:
    cfg = _resolve(args)
    mel_cfg = cfg.mel()
    if args.synthetic is not None:
        if not args.out:
            raise ValueError("--synthetic needs --out")
        corpus = generate_synthetic_corpus(args.synthetic, cfg["seed"], args.out, mel_cfg)
        out = Path(args.out)
    else:
        corpus = parse_ljspeech_metadata(Path(args.data_dir) / "metadata.csv")
        out = Path(args.out or args.data_dir)
        out.mkdir(parents=True, exist_ok=True)
    lex = corpus_lexicon(corpus, args.lexicon)
    if corpus.lexicon_path is not None and out != corpus.lexicon_path.parent:
        (out / LEXICON_FILE).write_text(corpus.lexicon_path.read_text(encoding="utf-8"), encoding="utf-8")
    elif args.lexicon:
        (out / LEXICON_FILE).write_text(Path(args.lexicon).read_text(encoding="utf-8"), encoding="utf-8")
    utts = build_features(corpus, lex, mel_cfg)
    save_feature_cache(out / FEATURES_FILE, utts)
    print(f"cached {len(utts)} utterances ({sum(u.n_frames for u in utts)} frames) to {out / FEATURES_FILE}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    torch.manual_seed(cfg["seed"])
    data_dir = Path(args.data_dir)
    utts = load_feature_cache(data_dir / FEATURES_FILE)
    lex_path = data_dir / LEXICON_FILE
    lex = load_lexicon(lex_path) if lex_path.exists() else None
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        trainer = ckpt.restore_trainer(utts, cfg.dtype)
        mel_cfg = ckpt.mel_config
        embed = ckpt.lexicon_entries is not None
        lexicon = ckpt.lexicon() if embed else None
    else:
        mel_cfg = cfg.mel()
        model = UDiTTTS(cfg.model(len(DEFAULT_VOCAB))).to(cfg.dtype)
        trainer = Trainer(model, cfg.training(), utts, dataset_mel_mean(utts), mel_cfg.log_min)
        embed = lex is not None
        lexicon = lex
    out = Path(args.out)
    log_path = out.with_suffix(".log.csv")
    every = cfg["checkpoint_every"]

    def save():
        nonlocal lexicon
        lx = lexicon if lexicon is not None else load_lexicon()
        save_checkpoint(out, Checkpoint.from_trainer(trainer, mel_cfg, lx, embed_lexicon=embed))

    def report(rec):
        if rec.skipped:
            logger.warning("step %d: non-finite gradient, update skipped", rec.step)
        if rec.step % 10 == 0:
            print(f"step {rec.step}: L_enc={rec.l_enc:.4f} L_dp={rec.l_dp:.4f} L_diff={rec.l_diff:.4f} grad={rec.grad_norm:.3f}", flush=True)
        if every and rec.step % every == 0:
            save()

    trainer.train(cfg["steps"], log_path=log_path, callback=report)
    save()
    print(f"wrote {out} at step {trainer.step}; log {log_path}")
    return 0


def _read_text(args) -> str:
    if args.text is not None:
        return args.text
    return Path(args.text_file).read_text(encoding="utf-8")


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    ckpt = load_checkpoint(args.checkpoint)
    synth = Synthesizer(ckpt, cfg.dtype)
    scfg = cfg.synthesis()
    result = synth.synthesize(_read_text(args), SynthesisConfig(**{**scfg.__dict__, "frame_budget": ckpt.model_config.decoder.n_frames}))
    save_wav(args.out, result.waveform)
    if args.dump_mels:
        d = Path(args.dump_mels)
        d.mkdir(parents=True, exist_ok=True)
        for i, mel in enumerate(result.mels):
            write_matrix(d / f"segment_{i:03d}.mat", mel.values)
    frames = sum(s.durations.n_frames for s in result.segments)
    print(f"wrote {args.out}: {len(result.segments)} segment(s), {frames} frames, {result.waveform.duration:.2f} s")
    return 0


def _write_csv(path, header, rows) -> None:
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    mel_cfg = cfg.mel()
    ref_dir, gen_dir = Path(args.ref_dir), Path(args.gen_dir)
    names = sorted(p.name for p in ref_dir.glob("*.wav") if (gen_dir / p.name).exists())
    if not names:
        raise ValueError(f"no paired WAV files between {ref_dir} and {gen_dir}")
    rows, lsds, ref_mels, gen_mels = [], [], [], []
    for name in names:
        ref, gen = load_wav(ref_dir / name, mel_cfg.sample_rate), load_wav(gen_dir / name, mel_cfg.sample_rate)
        value = lsd(ref, gen)
        lsds.append(value)
        rows.append(["lsd", name, f"{value:.6f}"])
        ref_mels.append(compute_mel(ref, mel_cfg))
        gen_mels.append(compute_mel(gen, mel_cfg))
    rows.append(["lsd", "mean", f"{np.mean(lsds):.6f}"])
    if args.ref_embeddings and args.gen_embeddings:
        a = EmbeddingSet(read_matrix(args.ref_embeddings), "external-file")
        b = EmbeddingSet(read_matrix(args.gen_embeddings), "external-file")
    else:
        a, b = mel_stats_embeddings(ref_mels), mel_stats_embeddings(gen_mels)
    if len(names) >= 2 or a.vectors.shape[0] >= 2:
        rows.append(["fd", a.provenance, f"{frechet_distance(a, b):.6f}"])
    if args.ref_posteriors and args.gen_posteriors:
        rows.append(["kld", "external-file", f"{mean_kl_divergence(read_matrix(args.ref_posteriors), read_matrix(args.gen_posteriors)):.6f}"])
    _write_csv(args.out, ["metric", "item", "value"], rows)
    return 0


def cmd_verify_math(args) -> int:
    results = run_math_checks(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    ckpt = load_checkpoint(args.checkpoint)
    synth = Synthesizer(ckpt, cfg.dtype)
    base = cfg.synthesis()
    cast = int if args.param == "n_steps" else float
    values = [cast(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("--values is empty")
    reference = load_wav(args.reference, ckpt.mel_config.sample_rate) if args.reference else None
    rows = []
    for v in values:
        params = {**base.__dict__, args.param: v, "frame_budget": ckpt.model_config.decoder.n_frames}
        scfg = SynthesisConfig(**params)
        start = time.perf_counter()
        result = synth.synthesize(args.text, scfg)
        elapsed = time.perf_counter() - start
        mels = np.concatenate([m.values for m in result.mels], axis=1)
        score = f"{lsd(reference, result.waveform):.6f}" if reference is not None else ""
        rows.append(
            [args.param, v, scfg.n_steps, scfg.tau, mels.shape[1], len(result.waveform), f"{float(mels.mean()):.6f}", f"{float(mels.std()):.6f}", score, f"{elapsed:.3f}"]
        )
    _write_csv(args.out, ["param", "value", "n_steps", "tau", "n_frames", "n_samples", "mel_mean", "mel_std", "lsd", "seconds"], rows)
    return 0


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "verify-math": cmd_verify_math,
    "sweep": cmd_sweep,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())

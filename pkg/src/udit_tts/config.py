"""Run configuration: INI file, ``UDIT_*`` environment variables and flag overrides.

Every key is unique across sections, so a key can be overridden without
naming its section. Precedence, lowest first: built-in defaults, config
file, environment, command-line flags.
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass

import torch

from .audio import MelConfig
from .inference import SynthesisConfig
from .networks import DecoderConfig, ModelConfig
from .training import TrainingConfig

ENV_PREFIX = "UDIT_"
logger = logging.getLogger(__name__)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


def _choice(*options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s

    return parse


# key -> (section, parser, default as text)
SCHEMA: dict[str, tuple[str, object, str]] = {
    "sample_rate": ("mel", int, "22050"),
    "n_mels": ("mel", int, "80"),
    "win_length": ("mel", int, "1024"),
    "hop_length": ("mel", int, "256"),
    "fft_size": ("mel", int, "1024"),
    "fmin": ("mel", float, "0.0"),
    "fmax": ("mel", float, "8000.0"),
    "log_floor": ("mel", float, "1e-5"),
    "model_size": ("model", _choice("tiny", "full"), "tiny"),
    "channels": ("model", _ints, ""),
    "n_res_blocks": ("model", int, ""),
    "n_dit_blocks": ("model", int, ""),
    "patch_size": ("model", _ints, ""),
    "hidden_dim": ("model", int, ""),
    "n_heads": ("model", int, ""),
    "attention": ("model", _bool, ""),
    "learning_rate": ("train", float, "1e-4"),
    "batch_size": ("train", int, "4"),
    "frame_crop": ("train", int, "256"),
    "grad_clip_max_norm": ("train", float, "1.0"),
    "t_floor": ("train", float, "1e-5"),
    "w_enc": ("train", float, "1.0"),
    "w_dp": ("train", float, "1.0"),
    "w_diff": ("train", float, "1.0"),
    "steps": ("train", int, "200"),
    "checkpoint_every": ("train", int, "0"),
    "seed": ("train", int, "0"),
    "precision": ("train", _choice("float32", "float64"), "float32"),
    "n_steps": ("synth", int, "80"),
    "tau": ("synth", float, "1.5"),
    "duration_scale": ("synth", float, "1.0"),
    "griffin_lim_iters": ("synth", int, "60"),
}
DECODER_KEYS = ("channels", "n_res_blocks", "n_dit_blocks", "patch_size", "hidden_dim", "n_heads", "attention")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResolvedConfig:
    values: dict
    sources: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.values["precision"] == "float64" else torch.float32

    def mel(self) -> MelConfig:
        return MelConfig(**{k: self.values[k] for k, (sec, _, _) in SCHEMA.items() if sec == "mel"})

    def training(self) -> TrainingConfig:
        keys = ("learning_rate", "batch_size", "frame_crop", "grad_clip_max_norm", "t_floor", "w_enc", "w_dp", "w_diff", "seed")
        return TrainingConfig(**{k: self.values[k] for k in keys})

    def synthesis(self) -> SynthesisConfig:
        return SynthesisConfig(
            n_steps=self.values["n_steps"],
            tau=self.values["tau"],
            frame_budget=self.values["frame_crop"],
            seed=self.values["seed"],
            duration_scale=self.values["duration_scale"],
            griffin_lim_iters=self.values["griffin_lim_iters"],
        )

    def model(self, vocab_size: int) -> ModelConfig:
        overrides = {k: self.values[k] for k in DECODER_KEYS if self.values[k] is not None}
        n_mels, n_frames = self.values["n_mels"], self.values["frame_crop"]
        if self.values["model_size"] == "tiny":
            return ModelConfig.tiny(vocab_size, n_mels=n_mels, n_frames=n_frames, **overrides)
        return ModelConfig(vocab_size, n_mels, decoder=DecoderConfig(n_mels=n_mels, n_frames=n_frames, **overrides))

    def render(self) -> str:
        """Resolved values with their sources, one ``key = value  # source`` line each."""
        return "\n".join(f"{k} = {self.values[k]}  # {self.sources[k]}" for k in SCHEMA)


def _parse(key: str, text: str, origin: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r} ({origin})")
    _, parser, _ = SCHEMA[key]
    if text == "":
        return None
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} ({origin}): {exc}") from exc


def read_config_file(path) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            if key not in SCHEMA:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            if SCHEMA[key][0] != section:
                raise ConfigError(f"{path}: key {key!r} belongs in [{SCHEMA[key][0]}], not [{section}]")
            out[key] = value
    return out


def resolve_config(path=None, env=None, flags: dict | None = None) -> ResolvedConfig:
    env = os.environ if env is None else env
    values, sources = {}, {}
    for key, (_, _, default) in SCHEMA.items():
        values[key], sources[key] = _parse(key, default, "default"), "default"
    layers = []
    if path is not None:
        layers.append((read_config_file(path), f"file {path}"))
    env_layer = {}
    for name, value in env.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX) :].lower()
            if key in SCHEMA:
                env_layer[key] = value
            else:
                logger.warning("ignoring unknown environment override %s", name)
    layers.append((env_layer, "env"))
    layers.append(({k: v for k, v in (flags or {}).items() if v is not None}, "flag"))
    for layer, origin in layers:
        for key, text in layer.items():
            values[key] = _parse(key, str(text), origin)
            sources[key] = origin
    return ResolvedConfig(values, sources)

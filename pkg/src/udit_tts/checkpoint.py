"""Single-file checkpoint container.

Layout::

    b"UDITCKPT" | format version (u32) | manifest length (u64) | manifest (UTF-8 JSON) | blocks

The manifest holds configs, vocabulary, scalars and a table of named blocks
(dtype, shape, byte offset into the block region). Blocks are raw
little-endian tensor bytes, so parameters survive a round trip bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import MelConfig
from .networks import DecoderConfig, DurationConfig, EncoderConfig, ModelConfig, UDiTTTS
from .text import DEFAULT_VOCAB, Lexicon, load_lexicon
from .training import TrainingConfig

MAGIC = b"UDITCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_TORCH_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "uint8": torch.uint8,
}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    mel_config: MelConfig
    train_config: TrainingConfig
    params: dict[str, torch.Tensor]
    mel_mean: float
    step: int = 0
    phoneme_vocab: tuple[str, ...] = DEFAULT_VOCAB
    # None means the bundled CMU dictionary
    lexicon_entries: dict[str, tuple[str, ...]] | None = None
    optimizer_state: dict | None = None
    rng_state: torch.Tensor | None = None
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train_config.seed

    def build_model(self, dtype: torch.dtype | None = None) -> UDiTTTS:
        model = UDiTTTS(self.model_config)
        model.load_state_dict(self.params)
        if dtype is not None:
            model = model.to(dtype)
        model.eval()
        return model

    def lexicon(self) -> Lexicon:
        if self.lexicon_entries is None:
            return load_lexicon(vocab=self.phoneme_vocab)
        return Lexicon(dict(self.lexicon_entries), self.phoneme_vocab)

    @classmethod
    def from_trainer(cls, trainer, mel_config: MelConfig, lexicon: Lexicon, embed_lexicon: bool = True) -> Checkpoint:
        return cls(
            model_config=trainer.model.cfg,
            mel_config=mel_config,
            train_config=trainer.cfg,
            params={k: v.detach().clone() for k, v in trainer.model.state_dict().items()},
            mel_mean=trainer.mel_mean,
            step=trainer.step,
            phoneme_vocab=lexicon.phoneme_vocab,
            lexicon_entries=dict(lexicon.entries) if embed_lexicon else None,
            optimizer_state=trainer.optimizer.state_dict(),
            rng_state=torch.get_rng_state(),
        )

    def restore_trainer(self, utterances, dtype: torch.dtype | None = None):
        from .training import Trainer

        model = UDiTTTS(self.model_config)
        model.load_state_dict(self.params)
        if dtype is not None:
            model = model.to(dtype)
        trainer = Trainer(model, self.train_config, utterances, self.mel_mean, self.mel_config.log_min)
        if self.optimizer_state is not None:
            trainer.optimizer.load_state_dict(self.optimizer_state)
        trainer.step = self.step
        if self.rng_state is not None:
            torch.set_rng_state(self.rng_state)
        return trainer


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        vocab_size=d["vocab_size"],
        n_mels=d["n_mels"],
        encoder=EncoderConfig(**d["encoder"]),
        duration=DurationConfig(**d["duration"]),
        decoder=DecoderConfig(**d["decoder"]),
    )


def _tensor_dtype_name(t: torch.Tensor) -> str:
    for name, dt in _TORCH_DTYPES.items():
        if t.dtype == dt:
            return name
    raise CheckpointError(f"unsupported tensor dtype {t.dtype}")


class _BlockWriter:
    def __init__(self):
        self.table: list[dict] = []
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, name: str, t: torch.Tensor) -> None:
        t = t.detach().cpu().contiguous()
        dtype = _tensor_dtype_name(t)
        raw = t.numpy().astype(np.dtype(dtype).newbyteorder("<"), copy=False).tobytes()
        self.table.append({"name": name, "dtype": dtype, "shape": list(t.shape), "offset": self.offset, "nbytes": len(raw)})
        self.chunks.append(raw)
        self.offset += len(raw)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blocks = _BlockWriter()
    for name, t in ckpt.params.items():
        blocks.add(f"param/{name}", t)
    optim_manifest = None
    if ckpt.optimizer_state is not None:
        optim_manifest = {"param_groups": ckpt.optimizer_state["param_groups"], "state": {}}
        # sorted order matches the sorted JSON manifest, so re-saving a loaded checkpoint is byte-identical
        for idx, st in sorted(ckpt.optimizer_state["state"].items()):
            keys = {}
            for key, val in sorted(st.items()):
                if isinstance(val, torch.Tensor):
                    blocks.add(f"optim/{idx}/{key}", val)
                    keys[key] = "block"
                else:
                    keys[key] = val
            optim_manifest["state"][str(idx)] = keys
    if ckpt.rng_state is not None:
        blocks.add("rng/torch", ckpt.rng_state)

    manifest = {
        "model_config": asdict(ckpt.model_config),
        "mel_config": asdict(ckpt.mel_config),
        "train_config": asdict(ckpt.train_config),
        "phoneme_vocab": list(ckpt.phoneme_vocab),
        "lexicon_entries": None
        if ckpt.lexicon_entries is None
        else {w: list(p) for w, p in ckpt.lexicon_entries.items()},
        "mel_mean": ckpt.mel_mean,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "optimizer": optim_manifest,
        "extra": ckpt.extra,
        "blocks": blocks.table,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, ckpt.format_version, len(payload)))
        fh.write(payload)
        for chunk in blocks.chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, n_manifest = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    manifest = json.loads(data[_PREFIX.size : _PREFIX.size + n_manifest].decode("utf-8"))
    base = _PREFIX.size + n_manifest
    tensors = {}
    for entry in manifest["blocks"]:
        start = base + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: block {entry['name']} is truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<")).astype(entry["dtype"])
        tensors[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())

    params = {k[len("param/") :]: v for k, v in tensors.items() if k.startswith("param/")}
    optimizer_state = None
    if manifest["optimizer"] is not None:
        state = {}
        for idx, keys in manifest["optimizer"]["state"].items():
            state[int(idx)] = {
                key: tensors[f"optim/{idx}/{key}"] if val == "block" else val for key, val in keys.items()
            }
        optimizer_state = {"state": state, "param_groups": manifest["optimizer"]["param_groups"]}
    lex = manifest["lexicon_entries"]
    tc = manifest["train_config"]
    return Checkpoint(
        model_config=model_config_from_dict(manifest["model_config"]),
        mel_config=MelConfig(**manifest["mel_config"]),
        train_config=TrainingConfig(**tc),
        params=params,
        mel_mean=manifest["mel_mean"],
        step=manifest["step"],
        phoneme_vocab=tuple(manifest["phoneme_vocab"]),
        lexicon_entries=None if lex is None else {w: tuple(p) for w, p in lex.items()},
        optimizer_state=optimizer_state,
        rng_state=tensors.get("rng/torch"),
        format_version=version,
        extra=manifest.get("extra", {}),
    )

import numpy as np
import pytest
import torch

from udit_tts.audio import MelConfig
from udit_tts.data import build_features, dataset_mel_mean, generate_synthetic_corpus, synthetic_lexicon
from udit_tts.networks import DecoderConfig, DurationConfig, EncoderConfig, ModelConfig, UDiTTTS
from udit_tts.text import DEFAULT_VOCAB

torch.set_num_threads(1)

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, description): acceptance criterion, reported in the summary")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    label, desc = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[label] = ("PASS" if report.outcome == "passed" else "FAIL", desc)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report._criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[-1])):
        status, desc = _CRITERIA[label]
        terminalreporter.write_line(f"{status}  {label}: {desc}")


def gradcheck_decoder_config() -> DecoderConfig:
    return DecoderConfig(
        n_mels=16,
        n_frames=32,
        channels=(4, 8),
        n_dit_blocks=1,
        patch_size=(2, 4),
        hidden_dim=16,
        n_heads=2,
        time_embed_dim=16,
    )


def gradcheck_model_config() -> ModelConfig:
    return ModelConfig(
        vocab_size=len(DEFAULT_VOCAB),
        n_mels=16,
        encoder=EncoderConfig(hidden_dim=8, n_heads=2, n_layers=1, ff_dim=16, prenet_layers=1, dropout=0.0),
        duration=DurationConfig(filter_dim=8, dropout=0.0),
        decoder=gradcheck_decoder_config(),
    )


def perturb_zero_init(module: torch.nn.Module, seed: int = 0, scale: float = 0.1) -> None:
    """Give exactly-zero parameters small random values so their gradients are informative."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            if bool((p == 0).all()):
                p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def finite_difference_error(loss_fn, params, n_coords=None, eps=1e-6, seed=0) -> float:
    """Relative error between autograd and central-difference gradients.

    ``loss_fn`` returns a scalar; ``params`` are float64 leaf tensors. With
    ``n_coords`` set, a random subset of coordinates is probed. The error is
    ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)`` over the probed vector.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    flat = [(p, i) for p in params for i in range(p.numel())]
    if n_coords is not None and n_coords < len(flat):
        pick = np.random.default_rng(seed).choice(len(flat), n_coords, replace=False)
        flat = [flat[k] for k in pick]
    auto, fd = [], []
    with torch.no_grad():
        for p, i in flat:
            view = p.view(-1)
            orig = float(view[i])
            view[i] = orig + eps
            up = float(loss_fn())
            view[i] = orig - eps
            down = float(loss_fn())
            view[i] = orig
            auto.append(float(p.grad.view(-1)[i]))
            fd.append((up - down) / (2 * eps))
    auto, fd = np.array(auto), np.array(fd)
    scale = max(np.linalg.norm(auto), np.linalg.norm(fd))
    assert scale > 0, "gradient is identically zero; nothing was checked"
    return float(np.linalg.norm(auto - fd) / scale)


@pytest.fixture(scope="session")
def mel_cfg():
    return MelConfig()


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    generate_synthetic_corpus(24, 11, out)
    return out


@pytest.fixture(scope="session")
def synthetic_utterances(synthetic_dir):
    from udit_tts.data import parse_ljspeech_metadata

    corpus = parse_ljspeech_metadata(synthetic_dir / "metadata.csv")
    return build_features(corpus, synthetic_lexicon())


@pytest.fixture(scope="session")
def synthetic_mel_mean(synthetic_utterances):
    return dataset_mel_mean(synthetic_utterances)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_trainer_factory(synthetic_utterances, synthetic_mel_mean, mel_cfg):
    """Builds fresh tiny trainers on the shared corpus with a 64-frame budget."""
    from udit_tts.training import Trainer, TrainingConfig

    def make(seed: int = 0, n_frames: int = 64, **cfg):
        torch.manual_seed(seed)
        model = UDiTTTS(ModelConfig.tiny(len(DEFAULT_VOCAB), n_frames=n_frames))
        tcfg = TrainingConfig(frame_crop=n_frames, seed=seed, **cfg)
        return Trainer(model, tcfg, synthetic_utterances, synthetic_mel_mean, mel_cfg.log_min)

    return make


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_trainer_factory, mel_cfg):
    from udit_tts.checkpoint import Checkpoint

    trainer = tiny_trainer_factory()
    trainer.train(1)
    return Checkpoint.from_trainer(trainer, mel_cfg, synthetic_lexicon())

"""Losses, the joint training step and the training loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .alignment import durations_from_path, expand_by_durations, gaussian_log_likelihood, mas_align
from .data import Utterance
from .diffusion import T_FLOOR, NoiseSchedule, lambda_t, sample_xt
from .networks import UDiTTTS
from .text import PAD


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    frame_crop: int = 256
    grad_clip_max_norm: float = 1.0
    t_floor: float = T_FLOOR
    w_enc: float = 1.0
    w_dp: float = 1.0
    w_diff: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seed" and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if self.frame_crop % 4:
            raise ValueError(f"frame_crop must be divisible by 4, got {self.frame_crop}")
        if not self.t_floor < 1:
            raise ValueError("t_floor must be < 1")

    @property
    def loss_weights(self) -> tuple[float, float, float]:
        return self.w_enc, self.w_dp, self.w_diff


@dataclass(frozen=True)
class TrainRecord:
    step: int
    l_enc: float
    l_dp: float
    l_diff: float
    total: float
    grad_norm: float
    grad_norm_clipped: float
    skipped: bool
    wall_time: float


def _masked_mean(sq: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return sq.mean()
    mask = mask.to(sq.dtype).expand_as(sq)
    return (sq * mask).sum() / mask.sum()


def encoder_loss(mu_frames: torch.Tensor, y: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared error between the aligned frame prior and the target mel.

    ``mask`` (broadcastable to the inputs) restricts the mean to real frames.
    """
    if mu_frames.shape != y.shape:
        raise ValueError(f"frame prior {tuple(mu_frames.shape)} and mel {tuple(y.shape)} differ in shape")
    return _masked_mean((mu_frames - y) ** 2, mask)


def duration_loss(pred_log_d: torch.Tensor, target_log_d: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """MSE between predicted and aligned log-durations."""
    if pred_log_d.shape != target_log_d.shape:
        raise ValueError(f"{tuple(pred_log_d.shape)} predictions for {tuple(target_log_d.shape)} targets")
    return _masked_mean((pred_log_d - target_log_d) ** 2, mask)


def diffusion_loss(
    score_fn,
    x0: torch.Tensor,
    mu: torch.Tensor,
    sched: NoiseSchedule,
    rng: torch.Generator | None,
    mask: torch.Tensor | None = None,
    t: torch.Tensor | None = None,
    t_floor: float = T_FLOOR,
) -> torch.Tensor:
    """Denoising score-matching loss ``lambda_t * mean |s + xi / sqrt(lambda_t)|^2``.

    ``x0`` and ``mu`` are ``[B, n_mels, n_frames]``. One ``t ~ U(t_floor, 1)``
    is drawn per example unless ``t`` is given; per-example losses are
    averaged over (masked) elements and then over the batch.
    """
    if x0.shape != mu.shape:
        raise ValueError(f"x0 {tuple(x0.shape)} and mu {tuple(mu.shape)} differ in shape")
    b = x0.shape[0]
    if t is None:
        t = t_floor + (1.0 - t_floor) * torch.rand(b, generator=rng, dtype=x0.dtype, device=x0.device)
    x_t, xi = sample_xt(x0, mu, sched, t, rng)
    score = score_fn(x_t, mu, t)
    lam = lambda_t(sched, t).reshape(b, *([1] * (x0.ndim - 1)))
    # (sqrt(lam) s + xi)^2 == lam (s + xi / sqrt(lam))^2 without dividing by a tiny sqrt(lam)
    sq = (torch.sqrt(lam) * score + xi) ** 2
    if mask is None:
        per_item = sq.flatten(1).mean(1)
    else:
        m = mask.to(sq.dtype).expand_as(sq)
        per_item = (sq * m).flatten(1).sum(1) / m.flatten(1).sum(1)
    loss = per_item.mean()
    if not bool(torch.isfinite(loss)):
        bad = int(torch.nonzero(~torch.isfinite(per_item))[0])
        raise FloatingPointError(f"non-finite diffusion loss at t={float(t[bad]):.6g}, lambda_t={float(lam.flatten()[bad]):.6g}")
    return loss


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0] & ((1 << 63) - 1))


def smoothed(values, step: int, window: int = 10) -> float:
    """Trailing mean of ``values[step - window : step]`` (1-based step)."""
    if step < 1 or step > len(values):
        raise ValueError(f"step {step} outside 1..{len(values)}")
    return float(np.mean(values[max(0, step - window) : step]))


def pad_tokens(seqs) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    tokens = torch.zeros(len(seqs), int(lengths.max()), dtype=torch.long)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = torch.as_tensor(s.tokens, dtype=torch.long)
    return tokens, lengths


def crop_or_pad(y: torch.Tensor, mu: torch.Tensor, crop: int, log_floor_value: float, mu_pad: float, gen: torch.Generator):
    """Jointly crop (random offset) or right-pad ``[n_mels, F]`` target and prior to ``crop`` frames.

    Returns ``(y, mu, mask)`` with ``mask`` 1 on real frames.
    """
    n_frames = y.shape[1]
    if n_frames > crop:
        start = int(torch.randint(0, n_frames - crop + 1, (1,), generator=gen))
        mask = torch.ones(crop, dtype=y.dtype)
        return y[:, start : start + crop], mu[:, start : start + crop], mask
    pad = crop - n_frames
    y = torch.nn.functional.pad(y, (0, pad), value=log_floor_value)
    mu = torch.nn.functional.pad(mu, (0, pad), value=mu_pad)
    mask = torch.cat([torch.ones(n_frames, dtype=y.dtype), torch.zeros(pad, dtype=y.dtype)])
    return y, mu, mask


class Trainer:
    """Joint encoder / duration / decoder optimization with a seed-determined data order.

    All randomness of step ``k`` (batch membership, crops, diffusion times,
    noise, dropout) is derived from ``(seed, k)``, so resuming from a saved
    state reproduces the uninterrupted loss trajectory.
    """

    def __init__(
        self,
        model: UDiTTTS,
        cfg: TrainingConfig,
        utterances: list[Utterance],
        mel_mean: float,
        log_floor_value: float,
        sched: NoiseSchedule = NoiseSchedule(),
    ):
        if not utterances:
            raise ValueError("no training utterances")
        if model.cfg.decoder.n_frames != cfg.frame_crop:
            raise ValueError(f"decoder frame budget {model.cfg.decoder.n_frames} != frame_crop {cfg.frame_crop}")
        self.model = model
        self.cfg = cfg
        self.utterances = utterances
        self.mel_mean = float(mel_mean)
        self.log_floor_value = float(log_floor_value)
        self.sched = sched
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
        self.step = 0
        self._perms: dict[int, np.ndarray] = {}

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            rng = np.random.default_rng(derive_seed(self.cfg.seed, epoch, 1))
            self._perms[epoch] = rng.permutation(len(self.utterances))
        return self._perms[epoch]

    def batch_indices(self, step: int) -> list[int]:
        n, b = len(self.utterances), self.cfg.batch_size
        out = []
        for pos in range(step * b, step * b + b):
            out.append(int(self._perm(pos // n)[pos % n]))
        return out

    def compute_losses(self, batch: list[Utterance], gen: torch.Generator) -> dict[str, torch.Tensor]:
        dtype = self.dtype
        tokens, lengths = pad_tokens([u.phonemes for u in batch])
        vocab = self.model.cfg.vocab_size
        if int(tokens.max()) >= vocab:
            raise ValueError(f"token id {int(tokens.max())} outside vocabulary of size {vocab}")
        mu_tok = self.model.encode(tokens, lengths)

        enc_num = mu_tok.new_zeros(())
        enc_den = 0
        log_targets = torch.zeros(tokens.shape, dtype=dtype)
        ys, mus, masks = [], [], []
        for b, utt in enumerate(batch):
            n = int(lengths[b])
            y = torch.as_tensor(utt.mel, dtype=dtype)
            if y.shape[1] < n:
                raise ValueError(f"utterance {utt.uid}: {y.shape[1]} frames for {n} tokens")
            mu_b = mu_tok[b, :n]
            log_lik = gaussian_log_likelihood(mu_b.detach().double().numpy(), y.T.double().numpy())
            durations = durations_from_path(mas_align(log_lik), n)
            log_targets[b, :n] = torch.as_tensor(durations.log_counts, dtype=dtype)
            mu_frames = expand_by_durations(mu_b, durations).T
            enc_num = enc_num + ((mu_frames - y) ** 2).sum()
            enc_den += y.numel()
            y_c, mu_c, mask = crop_or_pad(y, mu_frames, self.cfg.frame_crop, self.log_floor_value, self.mel_mean, gen)
            ys.append(y_c)
            mus.append(mu_c)
            masks.append(mask)

        l_enc = enc_num / enc_den
        token_mask = (torch.arange(tokens.shape[1])[None, :] < lengths[:, None]).to(dtype)
        pred = self.model.predict_log_durations(mu_tok.detach(), lengths)
        l_dp = duration_loss(pred, log_targets, token_mask)
        x0 = torch.stack(ys)
        mu = torch.stack(mus)
        frame_mask = torch.stack(masks)[:, None, :]
        l_diff = diffusion_loss(self.model.score, x0, mu, self.sched, gen, frame_mask, t_floor=self.cfg.t_floor)
        w_enc, w_dp, w_diff = self.cfg.loss_weights
        total = w_enc * l_enc + w_dp * l_dp + w_diff * l_diff
        return {"l_enc": l_enc, "l_dp": l_dp, "l_diff": l_diff, "total": total}

    def train_step(self) -> TrainRecord:
        start = time.perf_counter()
        step_seed = derive_seed(self.cfg.seed, self.step)
        gen = torch.Generator().manual_seed(step_seed)
        batch = [self.utterances[i] for i in self.batch_indices(self.step)]
        self.model.train()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(step_seed)
            losses = self.compute_losses(batch, gen)
            self.optimizer.zero_grad(set_to_none=True)
            losses["total"].backward()

        values = {k: float(v.detach()) for k, v in losses.items()}
        w_enc, w_dp, w_diff = self.cfg.loss_weights
        recombined = w_enc * values["l_enc"] + w_dp * values["l_dp"] + w_diff * values["l_diff"]
        if not math.isclose(values["total"], recombined, rel_tol=1e-5, abs_tol=1e-6):
            raise AssertionError(f"total loss {values['total']} != weighted sum of parts {recombined}")

        params = [p for p in self.model.parameters() if p.grad is not None]
        grad_norm = float(torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_clip_max_norm))
        skipped = not math.isfinite(grad_norm)
        if skipped:
            self.optimizer.zero_grad(set_to_none=True)
            clipped = float("nan")
        else:
            clipped = float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(p.grad) for p in params])))
            self.optimizer.step()
        self.step += 1
        return TrainRecord(
            step=self.step,
            l_enc=values["l_enc"],
            l_dp=values["l_dp"],
            l_diff=values["l_diff"],
            total=values["total"],
            grad_norm=grad_norm,
            grad_norm_clipped=clipped,
            skipped=skipped,
            wall_time=time.perf_counter() - start,
        )

    def train(self, n_steps: int, log_path=None, callback=None) -> list[TrainRecord]:
        records = []
        writer = None
        fh = None
        try:
            if log_path is not None:
                fh = open(log_path, "a", newline="", encoding="utf-8")
                writer = csv.DictWriter(fh, fieldnames=[f.name for f in fields(TrainRecord)])
                if fh.tell() == 0:
                    writer.writeheader()
            for _ in range(n_steps):
                rec = self.train_step()
                records.append(rec)
                if writer is not None:
                    writer.writerow(asdict(rec))
                    fh.flush()
                if callback is not None:
                    callback(rec)
        finally:
            if fh is not None:
                fh.close()
        return records

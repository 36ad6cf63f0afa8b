"""Mini-batch training over canonical frame-pair samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import NumericError
from .geometry import box_in_frame, relative_motion
from .model import TrackerModel, motion_loss
from .params import adamw_step, lr_at_epoch
from .pillars import CropSpec, canonicalize, crop
from .scene import LabeledSequence, TrainingSample, augment
from .tensor import Tape


@dataclass
class TrainSettings:
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    batch: int = 8
    epochs: int = 8
    decay_factor: float = 5.0
    decay_interval: int = 20
    max_steps: int = 0  # 0 = no cap
    augment: bool = True
    flip_axis: str = "x"
    max_rot_deg: float = 5.0
    seed: int = 0


def make_training_samples(sequences: list[LabeledSequence], spec: CropSpec = None,
                          per_sequence_spec=None) -> list[TrainingSample]:
    """Every consecutive frame pair of every sequence, cropped around the
    previous gt box (mimicking inference, where the crop center carries
    the previous prediction's error). `per_sequence_spec(seq)` supports
    windows derived from each sequence's target size (ratio-crop mode)."""
    samples = []
    for seq in sequences:
        seq_spec = per_sequence_spec(seq) if per_sequence_spec else spec
        for t in range(1, len(seq.frames)):
            ref = seq.gt[t - 1]
            samples.append(TrainingSample(
                prev_pts=crop(canonicalize(seq.frames[t - 1], ref), seq_spec),
                curr_pts=crop(canonicalize(seq.frames[t], ref), seq_spec),
                box_prev=ref.with_pose(0.0, 0.0, 0.0, 0.0),
                box_curr=box_in_frame(seq.gt[t], ref),
                target=relative_motion(seq.gt[t - 1], seq.gt[t]),
                spec=seq_spec))
    return samples


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    alphas: list[float]
    steps: int


def evaluate_mean_loss(model: TrackerModel,
                       samples: list[TrainingSample]) -> float:
    """Mean (unaugmented) loss over a sample list, no gradients."""
    total = 0.0
    for s in samples:
        pred = model.forward_clouds(s.prev_pts, s.curr_pts, s.spec)
        total += motion_loss(pred, s.target, model.config).item()
    return total / max(1, len(samples))


def train(model: TrackerModel, samples: list[TrainingSample],
          settings: TrainSettings, log=None) -> list[EpochStats]:
    """Shuffled mini-batch AdamW training; logs per-epoch mean loss and the
    per-stage motion-difference scale parameters."""
    rng = np.random.default_rng(settings.seed)
    history = []
    steps_done = 0
    for epoch in range(settings.epochs):
        lr = lr_at_epoch(settings.lr, epoch, settings.decay_factor,
                         settings.decay_interval)
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), settings.batch):
            if settings.max_steps and steps_done >= settings.max_steps:
                break
            batch = [samples[i] for i in order[start:start + settings.batch]]
            try:
                with Tape() as tape:
                    acc = None
                    for s in batch:
                        if settings.augment:
                            s = augment(s, rng, settings.flip_axis, settings.max_rot_deg)
                        pred = model.forward_clouds(s.prev_pts, s.curr_pts, s.spec)
                        term = motion_loss(pred, s.target, model.config)
                        acc = term if acc is None else T.add(acc, term)
                    loss = T.scale(acc, 1.0 / len(batch))
                tape.backward(loss)
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch} step {steps_done}: {exc}") from exc
            adamw_step(model.store, lr, settings.weight_decay, settings.betas)
            model.store.zero_grad()
            losses.append(loss.item())
            steps_done += 1
        stats = EpochStats(epoch=epoch, lr=lr,
                           mean_loss=float(np.mean(losses)) if losses else float("nan"),
                           alphas=model.alphas(), steps=steps_done)
        history.append(stats)
        if log:
            alphas = " ".join(f"{a:.4f}" for a in stats.alphas)
            log(f"epoch {epoch:3d} lr {lr:.2e} loss {stats.mean_loss:.6f} alphas [{alphas}]")
        if settings.max_steps and steps_done >= settings.max_steps:
            break
    return history

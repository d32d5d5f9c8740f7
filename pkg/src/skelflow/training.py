"""Mini-batch training loops, evaluation and the per-epoch report.

Report records are JSON lines with fields ``epoch, split, loss, accuracy,
lr, wall_seconds`` in that order. ``wall_seconds`` is null when wall time
recording is switched off, which makes reports bitwise reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .c3d import C3dNet, average_probabilities
from .data import EvalResult, Sample, confusion_counts
from .errors import InvalidArgumentError
from .flow import FlowClip, colorize_flow, crop_resize, split_clips, temporal_downsample
from .skeleton import SkeletonNet, extract_informativeness, forward_skeleton
from .tensor import OptimizerState, PlateauDecay, StepDecay, Tensor, ops, sgd_step
from .tensor.nn import Parameter


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 0.01
    schedule: str = "step"  # step | plateau | constant
    decay_factor: float = 5.0
    decay_every: int = 4
    patience: int = 10
    momentum: float = 0.9
    nesterov: bool = True
    l1_weight: float = 0.0
    eval_every: int = 0  # 0: evaluate after the last epoch only
    stop_at_train_accuracy: Optional[float] = None  # end early once reached

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if self.schedule not in ("step", "plateau", "constant"):
            raise InvalidArgumentError(f"unknown schedule {self.schedule!r}")

    def make_schedule(self):
        if self.schedule == "step":
            return StepDecay(self.learning_rate, self.decay_factor, self.decay_every)
        if self.schedule == "plateau":
            return PlateauDecay(self.learning_rate, self.decay_factor, self.patience)
        return StepDecay(self.learning_rate, 1.0, 1)


class Report:
    """Collects epoch records and optionally appends them to an ndjson file."""

    FIELDS = ("epoch", "split", "loss", "accuracy", "lr", "wall_seconds")

    def __init__(self, path=None, record_wall_time: bool = True) -> None:
        self.path = Path(path) if path is not None else None
        self.record_wall_time = record_wall_time
        self.records: list[dict] = []
        self._t0 = time.perf_counter()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def log(self, epoch: int, split: str, loss: float, accuracy: float, lr: float) -> dict:
        wall = round(time.perf_counter() - self._t0, 3) if self.record_wall_time else None
        rec = dict(zip(self.FIELDS, (epoch, split, float(loss), float(accuracy), float(lr), wall)))
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec

    def last(self, split: str) -> Optional[dict]:
        for rec in reversed(self.records):
            if rec["split"] == split:
                return rec
        return None


BatchFn = Callable[[np.ndarray, np.random.Generator], tuple[Tensor, np.ndarray]]


def fit(
    params: Sequence[tuple[str, Parameter]],
    batch_fn: BatchFn,
    labels: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    report: Report,
    evaluate_fn: Optional[Callable[[], tuple[float, float]]] = None,
    on_epoch_start: Optional[Callable[[], None]] = None,
) -> Report:
    """Shuffle, batch and step for ``cfg.epochs`` epochs.

    ``batch_fn(indices, rng)`` returns the mean loss tensor of the batch and
    its logits; ``evaluate_fn()`` returns (loss, accuracy) on held-out data.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise InvalidArgumentError("cannot train on an empty split")
    names = [name for name, _ in params]
    plist = [p for _, p in params]
    schedule = cfg.make_schedule()
    state = OptimizerState(cfg.learning_rate, cfg.momentum, cfg.nesterov, cfg.l1_weight)
    for epoch in range(1, cfg.epochs + 1):
        if on_epoch_start is not None:
            on_epoch_start()
        lr = schedule.rate(epoch)
        state.learning_rate = lr
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, logits = batch_fn(idx, rng)
            loss.backward()
            sgd_step(plist, state, names)
            total += loss.item() * len(idx)
            correct += int((np.argmax(logits, axis=1) == labels[idx]).sum())
        mean_loss = total / n
        report.log(epoch, "train", mean_loss, correct / n, lr)
        if isinstance(schedule, PlateauDecay):
            schedule.observe(mean_loss)
        reached = cfg.stop_at_train_accuracy is not None and correct / n >= cfg.stop_at_train_accuracy
        last = epoch == cfg.epochs or reached
        if evaluate_fn is not None and (last or (cfg.eval_every and epoch % cfg.eval_every == 0)):
            loss_t, acc_t = evaluate_fn()
            report.log(epoch, "test", loss_t, acc_t, lr)
        if reached:
            break
    return report


def sequence_metrics(probs: Sequence[np.ndarray], labels: Sequence[int], num_classes: int) -> tuple[float, EvalResult]:
    """Mean NLL of the averaged probabilities plus accuracy/confusion."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    picked = np.maximum(probs[np.arange(len(labels)), labels], 1e-300)
    loss = float(-np.log(picked).mean())
    return loss, confusion_counts(labels, np.argmax(probs, axis=1), num_classes)


# ---------------------------------------------------------------------------
# skeleton


def skeleton_arrays(samples: Sequence[Sample], frames: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.skeleton(frames).data for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def skeleton_probabilities(net: SkeletonNet, x: np.ndarray, batch: int = 64) -> np.ndarray:
    was = net.training
    net.eval()
    try:
        out = [ops.softmax(forward_skeleton(net, x[i : i + batch]).logits).values for i in range(0, len(x), batch)]
    finally:
        net.train(was)
    return np.concatenate(out)


def train_skeleton(
    net: SkeletonNet,
    train: Sequence[Sample],
    test: Sequence[Sample],
    cfg: TrainConfig,
    rng: np.random.Generator,
    report: Report,
) -> Report:
    frames = net.cfg.frames
    x, y = skeleton_arrays(train, frames)
    xt, yt = skeleton_arrays(test, frames) if test else (None, None)
    params = [(n, p) for n, p in net.named_parameters() if p.requires_grad]

    def batch_fn(idx, g):
        net.train()
        out = forward_skeleton(net, x[idx], g)
        return ops.cross_entropy(out.logits, y[idx]), out.logits.values

    def evaluate_fn():
        loss, res = sequence_metrics(skeleton_probabilities(net, xt), yt, net.cfg.num_classes)
        return loss, res.accuracy

    fit(params, batch_fn, y, cfg, rng, report, evaluate_fn if test else None)
    net.eval()
    return report


def sample_scores(net: SkeletonNet, samples: Sequence[Sample], layers="sum") -> np.ndarray:
    """(n, J) informativeness scores from a network in eval mode."""
    x, _ = skeleton_arrays(samples, net.cfg.frames)
    was = net.training
    net.eval()
    try:
        out = forward_skeleton(net, x)
    finally:
        net.train(was)
    return extract_informativeness(out.bottom_features(4), layers)


# ---------------------------------------------------------------------------
# flow


@dataclass
class FlowPrep:
    """Clip cutting and cropping settings shared by training and evaluation."""

    downsample: int = 2
    clip_len: int = 8
    overlap: int = 4
    crop: int = 32


@dataclass
class FlowItem:
    frames: np.ndarray  # colorized, downsampled (T', H, W, 3)
    joints2d: np.ndarray
    label: int


def prepare_flow(samples: Sequence[Sample], prep: FlowPrep) -> list[FlowItem]:
    items = []
    for s in samples:
        frames = colorize_flow(s.flow)
        frames, joints = temporal_downsample(frames, prep.downsample, s.flow.joints2d)
        items.append(FlowItem(frames, joints, s.label))
    return items


def _crop(item: FlowItem, prep: FlowPrep, training: bool, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    size = (prep.crop, prep.crop)
    return crop_resize(item.frames, item.joints2d, size, size, training=training, rng=rng)


def train_clip(item: FlowItem, prep: FlowPrep, rng: np.random.Generator) -> FlowClip:
    """One randomly cropped, randomly positioned clip of a sequence."""
    frames, joints, valid = _crop(item, prep, True, rng)
    clips = split_clips(frames, joints, valid, prep.clip_len, prep.overlap)
    return clips[int(rng.integers(0, len(clips)))]


def eval_clips(item: FlowItem, prep: FlowPrep) -> list[FlowClip]:
    frames, joints, valid = _crop(item, prep, False, None)
    return split_clips(frames, joints, valid, prep.clip_len, prep.overlap)


def stack(clips: Sequence[FlowClip]):
    return (
        np.stack([c.tensor for c in clips]),
        np.stack([c.joints2d for c in clips]),
        np.stack([c.valid for c in clips]),
    )


def flow_probabilities(net: C3dNet, clip_sets: Sequence[list[FlowClip]], scores=None) -> np.ndarray:
    """Per-sequence mean softmax over each sequence's clips."""
    was = net.training
    net.eval()
    try:
        out = []
        for i, clips in enumerate(clip_sets):
            x, j, v = stack(clips)
            s = None if scores is None else np.repeat(np.asarray(scores[i])[None], len(clips), axis=0)
            logits = net(x, j, v, s).logits
            out.append(average_probabilities(ops.softmax(logits).values))
    finally:
        net.train(was)
    return np.stack(out)


def train_flow(
    net: C3dNet,
    train: Sequence[Sample],
    test: Sequence[Sample],
    cfg: TrainConfig,
    prep: FlowPrep,
    rng: np.random.Generator,
    report: Report,
    train_scores: Optional[np.ndarray] = None,
    test_scores: Optional[np.ndarray] = None,
) -> Report:
    items = prepare_flow(train, prep)
    y = np.array([it.label for it in items], dtype=np.int64)
    test_clips = [eval_clips(it, prep) for it in prepare_flow(test, prep)] if test else []
    yt = np.array([s.label for s in test], dtype=np.int64)
    params = [(n, p) for n, p in net.named_parameters() if p.requires_grad]

    def batch_fn(idx, g):
        net.train()
        clips = [train_clip(items[i], prep, g) for i in idx]
        x, j, v = stack(clips)
        s = None if train_scores is None else train_scores[idx]
        out = net(x, j, v, s, rng=g)
        return ops.cross_entropy(out.logits, y[idx]), out.logits.values

    def evaluate_fn():
        probs = flow_probabilities(net, test_clips, test_scores)
        loss, res = sequence_metrics(probs, yt, net.cfg.num_classes)
        return loss, res.accuracy

    fit(params, batch_fn, y, cfg, rng, report, evaluate_fn if test else None)
    net.eval()
    return report

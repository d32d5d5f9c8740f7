"""Late fusion of the flow and skeleton networks.

The two penultimate feature vectors are concatenated (flow first, skeleton
second) under a single softmax head. When the flow net uses level-2
attention, every forward pass recomputes the joint scores from the live
skeleton net's bottom layers.

Policies:

* ``joint``: everything trains under the shared cross-entropy loss. The
  skeleton net must be pretrained, since the scores it feeds to the masks
  are only meaningful once its bottom layers have learned something.
* ``frozen_skeleton``: the skeleton net stays in evaluation mode with its
  parameters excluded from updates, so it is bit-identical after training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .c3d import C3dNet, C3dOutput
from .data import Sample
from .errors import InvalidArgumentError, PolicyError
from .skeleton import SkeletonNet, SkeletonOutput, extract_informativeness, parse_layers
from .tensor import Linear, Module, Tensor, ops
from .training import (
    FlowPrep,
    Report,
    TrainConfig,
    eval_clips,
    fit,
    prepare_flow,
    sequence_metrics,
    skeleton_arrays,
    stack,
    train_clip,
)

POLICIES = ("joint", "frozen_skeleton")


@dataclass
class FusionConfig:
    flow_width: int = 64
    skeleton_width: int = 48
    num_classes: int = 4
    policy: str = "joint"
    score_layers: str = "sum"
    allow_untrained_skeleton: bool = False

    def __post_init__(self) -> None:
        if self.policy == "frozen":
            self.policy = "frozen_skeleton"
        if self.policy not in POLICIES:
            raise InvalidArgumentError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        parse_layers(self.score_layers)

    @property
    def head_width(self) -> int:
        return self.flow_width + self.skeleton_width


@dataclass
class FusedOutput:
    logits: Tensor
    features: Tensor
    scores: Optional[np.ndarray]
    skeleton: SkeletonOutput
    flow: C3dOutput


class FusedNet(Module):
    def __init__(self, skeleton: SkeletonNet, flow: C3dNet, cfg: FusionConfig, rng: np.random.Generator) -> None:
        if skeleton.cfg.feature_width != cfg.skeleton_width:
            raise InvalidArgumentError(
                f"skeleton features are {skeleton.cfg.feature_width} wide, config says {cfg.skeleton_width}"
            )
        if flow.cfg.feature_width != cfg.flow_width:
            raise InvalidArgumentError(
                f"flow features are {flow.cfg.feature_width} wide, config says {cfg.flow_width}"
            )
        if flow.cfg.num_classes != cfg.num_classes or skeleton.cfg.num_classes != cfg.num_classes:
            raise InvalidArgumentError("skeleton, flow and fusion configs disagree on the class count")
        self.cfg = cfg
        self.flow = flow
        self.skeleton = skeleton
        self.head = Linear(cfg.head_width, cfg.num_classes, rng)
        self.apply_policy()

    @property
    def frozen(self) -> bool:
        return self.cfg.policy == "frozen_skeleton"

    def apply_policy(self) -> None:
        self.skeleton.set_trainable(not self.frozen)
        if self.frozen:
            self.skeleton.eval()

    def train(self, mode: bool = True) -> "FusedNet":
        self.training = mode
        self.flow.train(mode)
        self.head.train(mode)
        self.skeleton.train(mode and not self.frozen)
        return self

    def trainable_parameters(self) -> list:
        """Parameters updated by training; the single-modal classifiers are unused."""
        return [
            (n, p)
            for n, p in self.named_parameters()
            if p.requires_grad and not n.startswith(("flow.classifier.", "skeleton.classifier."))
        ]

    def needs_scores(self) -> bool:
        return 2 in self.flow.cfg.attention

    def __call__(
        self,
        skeleton_x,
        clips,
        joints=None,
        valid=None,
        rng: Optional[np.random.Generator] = None,
        scores: Optional[np.ndarray] = None,
    ) -> FusedOutput:
        """Fused forward pass.

        Scores enter the masks as constants. Passing ``scores`` pins them
        instead of recomputing from the live skeleton net, which is what a
        finite-difference check of the detached graph needs.
        """
        x = skeleton_x if isinstance(skeleton_x, Tensor) else Tensor(np.asarray(skeleton_x, dtype=np.float64))
        if x.ndim == 2:
            x = ops.reshape(x, (1,) + x.shape)
        sk = self.skeleton(x, rng)
        if scores is None and self.needs_scores():
            scores = extract_informativeness(sk.bottom_features(4), self.cfg.score_layers)
        fl = self.flow(clips, joints, valid, scores, rng)
        if fl.features.shape[0] != sk.features.shape[0]:
            raise InvalidArgumentError(
                f"{fl.features.shape[0]} clips but {sk.features.shape[0]} skeleton sequences"
            )
        feats = ops.concat([fl.features, sk.features], axis=1)
        return FusedOutput(self.head(feats), feats, scores, sk, fl)


def build_fused(skeleton: SkeletonNet, flow: C3dNet, cfg: FusionConfig, seed_or_rng) -> FusedNet:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    return FusedNet(skeleton, flow, cfg, rng)


def parameter_checksum(module: Module) -> str:
    """SHA-256 over every parameter and buffer, in name order."""
    h = hashlib.sha256()
    for name, value in sorted(module.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
    return h.hexdigest()


def fused_probabilities(net: FusedNet, skeleton_x: np.ndarray, clip_sets) -> np.ndarray:
    """Per-sequence mean of the fused softmax over each sequence's clips."""
    was = net.training
    net.eval()
    try:
        out = []
        for x, clips in zip(skeleton_x, clip_sets):
            c, j, v = stack(clips)
            xs = np.repeat(x[None], len(clips), axis=0)
            probs = ops.softmax(net(xs, c, j, v).logits).values
            out.append(probs.mean(axis=0))
    finally:
        net.train(was)
    return np.stack(out)


def check_policy(net: FusedNet, skeleton_pretrained: bool) -> None:
    if net.cfg.policy == "joint" and not skeleton_pretrained and not net.cfg.allow_untrained_skeleton:
        raise PolicyError(
            "joint fusion needs a skeleton network pretrained on the same labels, because its "
            "bottom layers guide the flow attention from the first epoch; pass a skeleton "
            "checkpoint or set fusion.allow_untrained_skeleton=true"
        )


def train(
    net: FusedNet,
    train_samples: Sequence[Sample],
    test_samples: Sequence[Sample],
    cfg: TrainConfig,
    prep: FlowPrep,
    rng: np.random.Generator,
    report: Report,
    skeleton_pretrained: bool = False,
) -> Report:
    """Train the fused network under its policy; returns the report."""
    check_policy(net, skeleton_pretrained)
    net.apply_policy()
    frames = net.skeleton.cfg.frames
    x, y = skeleton_arrays(train_samples, frames)
    items = prepare_flow(train_samples, prep)
    if test_samples:
        xt, yt = skeleton_arrays(test_samples, frames)
        test_clips = [eval_clips(it, prep) for it in prepare_flow(test_samples, prep)]
    params = net.trainable_parameters()

    def batch_fn(idx, g):
        net.train()
        c, j, v = stack([train_clip(items[i], prep, g) for i in idx])
        out = net(x[idx], c, j, v, rng=g)
        return ops.cross_entropy(out.logits, y[idx]), out.logits.values

    def evaluate_fn():
        probs = fused_probabilities(net, xt, test_clips)
        loss, res = sequence_metrics(probs, yt, net.cfg.num_classes)
        return loss, res.accuracy

    fit(params, batch_fn, y, cfg, rng, report, evaluate_fn if test_samples else None)
    net.eval()
    return report

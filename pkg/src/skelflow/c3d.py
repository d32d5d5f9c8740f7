"""C3D-style spatiotemporal classifier over colorized flow clips.

Each conv layer is followed by ReLU and, when enabled for that layer, by a
skeleton-guided attention module; pooling comes after attention. Joint
positions are re-aligned to every layer: one temporal midpoint
interpolation per temporal pooling passed so far, then a floor spatial
downsample from the input size straight to the layer size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .attention import (
    apply_attention,
    binary_mask_values,
    downsample_joint_coords,
    interpolate_temporal_coords,
    radius_for_width,
    weighted_mask_values,
)
from .errors import InvalidArgumentError
from .flow import FlowClip
from .tensor import Conv3d, Linear, Module, Tensor, ops

ATTENTION_NAMES = {"none": 0, "c3d-f": 0, "at1": 1, "at-1": 1, "at2": 2, "at-2": 2}


def parse_attention(value) -> int:
    if isinstance(value, str):
        key = value.strip().lower()
        if key in ATTENTION_NAMES:
            return ATTENTION_NAMES[key]
        if key.isdigit():
            value = int(key)
        else:
            raise InvalidArgumentError(f"unknown attention setting {value!r}")
    if value is None:
        return 0
    if int(value) not in (0, 1, 2):
        raise InvalidArgumentError(f"attention level must be none, 1 or 2, got {value!r}")
    return int(value)


@dataclass
class C3dConfig:
    in_channels: int = 3
    clip_len: int = 8
    height: int = 32
    width: int = 32
    conv_channels: tuple[int, ...] = (8, 16, 16, 32)
    pools: tuple = ((1, 2, 2), (2, 2, 2), (2, 2, 2), None)
    kernel: tuple[int, int, int] = (3, 3, 3)
    fc_widths: tuple[int, ...] = (64, 64)
    num_classes: int = 4
    attention: Union[str, int, Sequence] = "none"
    radius_override: Optional[int] = None
    dropout: float = 0.5
    joint_count: int = 5
    input_mean: float = 0.5  # subtracted from colorized input; zero motion is 0.5
    input_std: float = 0.125  # inputs are divided by this after centring
    weight_init: str = "glorot"  # glorot | he

    def __post_init__(self) -> None:
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.pools = tuple(None if p in (None, "none") else tuple(int(v) for v in p) for p in self.pools)
        self.kernel = tuple(int(k) for k in self.kernel)
        self.fc_widths = tuple(int(v) for v in self.fc_widths)
        if len(self.pools) != len(self.conv_channels):
            raise InvalidArgumentError(
                f"{len(self.pools)} pool entries for {len(self.conv_channels)} conv layers"
            )
        if isinstance(self.attention, (str, int)) or self.attention is None:
            levels = (parse_attention(self.attention),) * len(self.conv_channels)
        else:
            levels = tuple(parse_attention(a) for a in self.attention)
        if len(levels) != len(self.conv_channels):
            raise InvalidArgumentError(
                f"attention given for {len(levels)} layers but there are {len(self.conv_channels)}"
            )
        self.attention = levels
        if not self.input_std > 0:
            raise InvalidArgumentError(f"input_std must be positive, got {self.input_std}")
        self.layer_dims()

    def layer_dims(self) -> list[tuple[int, int, int, int]]:
        """(l, h, w, temporal pools before) for every conv layer output."""
        l, h, w, tp = self.clip_len, self.height, self.width, 0
        dims = []
        for i, pool in enumerate(self.pools):
            dims.append((l, h, w, tp))
            if pool is not None:
                pt, ph, pw = pool
                if pt > l or ph > h or pw > w:
                    raise InvalidArgumentError(
                        f"pool {pool} after conv layer {i + 1} would shrink {(l, h, w)} below 1"
                    )
                l, h, w = -(-l // pt), -(-h // ph), -(-w // pw)
                if pt > 1:
                    tp += 1
        return dims

    def flat_width(self) -> int:
        l, h, w = self.clip_len, self.height, self.width
        for pool in self.pools:
            if pool is not None:
                l, h, w = -(-l // pool[0]), -(-h // pool[1]), -(-w // pool[2])
        return self.conv_channels[-1] * l * h * w

    @property
    def feature_width(self) -> int:
        return self.fc_widths[-1]

    def with_attention(self, attention) -> "C3dConfig":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw["attention"] = attention
        return C3dConfig(**kw)

    @classmethod
    def full_scale(cls, num_classes: int = 60) -> "C3dConfig":
        return cls(
            clip_len=16,
            height=112,
            width=112,
            conv_channels=(64, 128, 256, 256, 512, 512, 512, 512),
            pools=((1, 2, 2), (2, 2, 2), None, (2, 2, 2), None, (2, 2, 2), None, (2, 2, 2)),
            fc_widths=(4096, 4096),
            num_classes=num_classes,
            joint_count=50,
        )


@dataclass
class C3dOutput:
    logits: Tensor
    features: Tensor
    masks: list = field(default_factory=list)


class C3dNet(Module):
    def __init__(self, cfg: C3dConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        convs = []
        c_in = cfg.in_channels
        for c in cfg.conv_channels:
            convs.append(Conv3d(c_in, c, rng, kernel=cfg.kernel, padding="same", init=cfg.weight_init))
            c_in = c
        self.convs = convs
        fcs = []
        n_in = cfg.flat_width()
        for width in cfg.fc_widths:
            fcs.append(Linear(n_in, width, rng, init=cfg.weight_init))
            n_in = width
        self.fcs = fcs
        self.classifier = Linear(n_in, cfg.num_classes, rng)

    def feature_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("classifier.")]

    def radius(self, width: int) -> int:
        if self.cfg.radius_override is not None:
            return int(self.cfg.radius_override)
        return radius_for_width(width)

    def build_masks(self, joints, valid, scores=None) -> list[Optional[np.ndarray]]:
        """Per-layer masks shaped (B, 1, l, h, w), or None where disabled."""
        cfg = self.cfg
        levels = cfg.attention
        if not any(levels):
            return [None] * len(levels)
        if joints is None:
            raise InvalidArgumentError("attention is enabled but no joint positions were given")
        joints = np.asarray(joints)
        if joints.ndim == 3:
            joints = joints[None]
        b, l0, j = joints.shape[:3]
        if l0 != cfg.clip_len:
            raise InvalidArgumentError(f"joints cover {l0} frames, clips have {cfg.clip_len}")
        valid = np.ones((b, l0, j), dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(b, l0, j)
        if 2 in levels:
            if scores is None:
                raise InvalidArgumentError("level-2 attention needs joint scores")
            scores = np.asarray(scores, dtype=np.float64).reshape(b, -1)
            if scores.shape[1] != j:
                raise InvalidArgumentError(f"got {scores.shape[1]} scores for {j} joints")
        aligned = {0: (joints, valid)}
        pools_t = [p[0] if p is not None else 1 for p in cfg.pools]
        masks: list[Optional[np.ndarray]] = []
        temporal_factors = [f for f in pools_t if f > 1]
        for level, (l, h, w, tp) in zip(levels, cfg.layer_dims()):
            if not level:
                masks.append(None)
                continue
            for k in range(1, tp + 1):
                if k not in aligned:
                    prev_j, prev_v = aligned[k - 1]
                    aligned[k] = interpolate_temporal_coords(prev_j, prev_v, temporal_factors[k - 1], axis=1)
            jt, vt = aligned[tp]
            js = downsample_joint_coords(jt, (cfg.height, cfg.width), (h, w))
            r = self.radius(w)
            if level == 1:
                m = binary_mask_values(js, vt, h, w, r)
            else:
                m = weighted_mask_values(js, vt, h, w, r, scores[:, None, :])
            masks.append(m[:, None])
        return masks

    def __call__(
        self,
        clips,
        joints=None,
        valid=None,
        scores=None,
        rng: Optional[np.random.Generator] = None,
    ) -> C3dOutput:
        x = clips if isinstance(clips, Tensor) else Tensor(clips)
        if x.ndim == 4:
            x = ops.reshape(x, (1,) + x.shape)
        cfg = self.cfg
        expected = (cfg.in_channels, cfg.clip_len, cfg.height, cfg.width)
        if x.shape[1:] != expected:
            raise InvalidArgumentError(f"clip batch must be (B,) + {expected}, got {x.shape}")
        masks = self.build_masks(joints, valid, scores)
        if cfg.input_mean:
            x = ops.add(x, Tensor(np.array(-cfg.input_mean)))
        if cfg.input_std != 1.0:
            x = ops.mul(x, Tensor(np.array(1.0 / cfg.input_std)))
        for conv, pool, mask in zip(self.convs, cfg.pools, masks):
            x = ops.relu(conv(x))
            if mask is not None:
                x = apply_attention(x, mask)
            if pool is not None:
                x = ops.maxpool3d(x, pool)
        x = ops.flatten(x)
        drop = cfg.dropout if self.training else 0.0
        for fc in self.fcs:
            x = ops.dropout(ops.relu(fc(x)), drop, rng)
        return C3dOutput(self.classifier(x), x, masks)


def build_c3d(cfg: C3dConfig, seed_or_rng) -> C3dNet:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    return C3dNet(cfg, rng)


def stack_clips(clips: Sequence[FlowClip]):
    """(tensors, joints, valid) batched from a list of clips."""
    return (
        np.stack([c.tensor for c in clips]),
        np.stack([c.joints2d for c in clips]),
        np.stack([c.valid for c in clips]),
    )


def average_probabilities(probs) -> np.ndarray:
    """Arithmetic mean of per-clip probability vectors."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InvalidArgumentError("need at least one clip prediction")
    return probs.mean(axis=0)


def predict_sequence(net: C3dNet, clips: Sequence[FlowClip], scores=None) -> np.ndarray:
    """Mean softmax over all clips of one sequence (evaluated in eval mode)."""
    if len(clips) == 0:
        raise InvalidArgumentError("predict_sequence needs at least one clip")
    was_training = net.training
    net.eval()
    try:
        x, j, v = stack_clips(clips)
        s = None if scores is None else np.repeat(np.asarray(scores, dtype=np.float64)[None], len(clips), axis=0)
        out = net(x, j, v, s)
    finally:
        net.train(was_training)
    probs = ops.softmax(out.logits).values
    return average_probabilities(probs)

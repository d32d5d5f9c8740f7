"""Two-branch skeleton network and per-joint informativeness scores.

The network has a residual temporal convnet branch (TCN) that convolves over
time with all joint coordinates as channels, and a mirrored body-joints
branch (BJCN) that first subsamples time, then transposes so that size-1
filters with weights spanning the whole (subsampled) time axis slide over
the joint-coordinate rows. Every BJCN layer output keeps one row per joint
coordinate, so its post-ReLU activations can be summed per joint into an
informativeness score.

Layer ``d`` of either branch computes::

    X1 = conv1(X0)
    Xd = proj_d(X{d-1}) + conv_d(relu(bn_{d-1}(X{d-1})))

where ``proj_d`` is the identity unless the channel count or stride
changes, in which case it is a filter-size-1 convolution with that stride.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError
from .tensor import BatchNorm, Conv1d, Linear, Module, Tensor, ops
from .tensor.nn import Parameter

LayerSelection = Union[str, int, Iterable[int]]


# ---------------------------------------------------------------------------
# data


@dataclass
class SkeletonSequence:
    """Normalized skeleton clip.

    ``data`` has shape (M, N) with M = skeleton_count * K * 3 rows ordered
    skeleton, joint, plane; frames at or beyond ``valid_frames`` are zero.
    """

    joints_per_skeleton: int
    skeleton_count: int
    data: np.ndarray
    valid_frames: int

    def __post_init__(self) -> None:
        m = self.skeleton_count * self.joints_per_skeleton * 3
        if self.data.ndim != 2 or self.data.shape[0] != m:
            raise InvalidArgumentError(
                f"skeleton data must have {m} rows (S*K*3), got shape {self.data.shape}"
            )
        if not 0 <= self.valid_frames <= self.data.shape[1]:
            raise InvalidArgumentError(
                f"valid_frames {self.valid_frames} outside [0, {self.data.shape[1]}]"
            )

    @property
    def joint_count(self) -> int:
        return self.skeleton_count * self.joints_per_skeleton

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]


def normalize_skeleton(
    raw: np.ndarray,
    max_frames: int,
    joints_per_skeleton: int,
    skeleton_count: int = 1,
) -> SkeletonSequence:
    """Min-max normalize each motion plane to [-1, 1], then pad/truncate.

    ``raw`` is (T, S*K*3) or (T, S, K, 3) in joint-major order. A plane whose
    values are all equal maps to 0.
    """
    raw = np.asarray(raw, dtype=np.float64)
    t = raw.shape[0] if raw.ndim else 0
    raw = raw.reshape(t, -1)
    m = skeleton_count * joints_per_skeleton * 3
    if t < 1:
        raise InvalidArgumentError("skeleton needs at least one frame")
    if raw.shape[1] != m:
        raise InvalidArgumentError(f"expected {m} coordinates per frame, got {raw.shape[1]}")
    if not np.all(np.isfinite(raw)):
        raise InvalidArgumentError("skeleton coordinates must be finite")
    if max_frames < 1:
        raise InvalidArgumentError(f"max_frames must be positive, got {max_frames}")
    keep = min(t, max_frames)
    raw = raw[:keep]
    out = np.zeros_like(raw)
    for plane in range(3):
        v = raw[:, plane::3]
        lo, hi = v.min(), v.max()
        if hi > lo:
            out[:, plane::3] = 2.0 * (v - lo) / (hi - lo) - 1.0
    data = np.zeros((m, max_frames))
    data[:, :keep] = out.T
    return SkeletonSequence(joints_per_skeleton, skeleton_count, data, keep)


# ---------------------------------------------------------------------------
# config


@dataclass
class ResTcnConfig:
    """Architecture of the two-branch skeleton net.

    ``tcn_filters`` lists the filter count of every TCN conv layer (the
    first entry is the plain input conv, each further entry a residual
    layer). The BJCN branch mirrors it with ``bjcn_filter_multiplier`` times
    as many filters of size 1 and stride 1.
    """

    joints_per_skeleton: int = 5
    skeleton_count: int = 1
    frames: int = 60
    num_classes: int = 4
    tcn_filters: tuple[int, ...] = (8, 8, 16, 32)
    tcn_strides: tuple[int, ...] = (1, 1, 2, 2)
    filter_size: int = 3
    padding: str = "same"
    bjcn_downsample_factor: int = 5
    bjcn_filter_multiplier: int = 2
    fc_tcn_width: int = 16
    fc_bjcn_width: int = 32
    dropout: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.99

    def __post_init__(self) -> None:
        self.tcn_filters = tuple(int(v) for v in self.tcn_filters)
        self.tcn_strides = tuple(int(v) for v in self.tcn_strides)
        if len(self.tcn_filters) < 1 or len(self.tcn_filters) != len(self.tcn_strides):
            raise InvalidArgumentError("tcn_filters and tcn_strides must be non-empty and equal length")
        if min(self.tcn_filters) < 1 or min(self.tcn_strides) < 1:
            raise InvalidArgumentError("filter counts and strides must be positive")
        if self.padding != "same":
            raise InvalidArgumentError("residual layers need 'same' padding so both paths align")
        for name in ("joints_per_skeleton", "skeleton_count", "frames", "num_classes",
                     "filter_size", "bjcn_downsample_factor", "bjcn_filter_multiplier",
                     "fc_tcn_width", "fc_bjcn_width"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer")

    @property
    def rows(self) -> int:
        return self.skeleton_count * self.joints_per_skeleton * 3

    @property
    def joint_count(self) -> int:
        return self.skeleton_count * self.joints_per_skeleton

    @property
    def bjcn_filters(self) -> tuple[int, ...]:
        return tuple(self.bjcn_filter_multiplier * n for n in self.tcn_filters)

    @property
    def bjcn_frames(self) -> int:
        return (self.frames - 1) // self.bjcn_downsample_factor + 1

    @property
    def tcn_out_frames(self) -> int:
        t = self.frames
        for s in self.tcn_strides:
            t = -(-t // s)
        return t

    @property
    def feature_width(self) -> int:
        return self.fc_tcn_width + self.fc_bjcn_width

    @classmethod
    def full_scale(cls, num_classes: int = 60) -> "ResTcnConfig":
        """Sizes used on the full dataset: 2 skeletons x 25 joints, 300 frames."""
        return cls(
            joints_per_skeleton=25,
            skeleton_count=2,
            frames=300,
            num_classes=num_classes,
            tcn_filters=(64, 64, 64, 64, 128, 128, 128, 256, 256, 256),
            tcn_strides=(1, 1, 1, 1, 2, 1, 1, 2, 1, 1),
            filter_size=8,
            fc_tcn_width=256,
            fc_bjcn_width=512,
        )


# ---------------------------------------------------------------------------
# network


class ResidualLayer(Module):
    """One conv layer plus its BN; residual unless it is the first layer."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        filter_size: int,
        stride: int,
        rng: np.random.Generator,
        bn: BatchNorm,
        first: bool,
        padding: str = "same",
    ) -> None:
        self.first = first
        self.conv = Conv1d(c_in, c_out, filter_size, rng, stride=stride, padding=padding)
        self.proj = None
        if not first and (c_in != c_out or stride != 1):
            self.proj = Conv1d(c_in, c_out, 1, rng, stride=stride, padding=padding)
        self.bn = bn

    def __call__(self, x_prev: Optional[Tensor], a_prev: Tensor) -> tuple[Tensor, Tensor]:
        """Return (pre-BN output X_d, post-ReLU activation)."""
        y = self.conv(a_prev)
        if not self.first:
            skip = self.proj(x_prev) if self.proj is not None else x_prev
            y = ops.add(skip, y)
        return y, ops.relu(self.bn(y))


def _stack(layers: Sequence[ResidualLayer], x0: Tensor) -> list[Tensor]:
    acts = []
    x, a = None, x0
    for layer in layers:
        x, a = layer(x, a)
        acts.append(a)
    return acts


class ResTcn(Module):
    """Temporal branch over (B, M, N) input."""

    def __init__(self, cfg: ResTcnConfig, rng: np.random.Generator) -> None:
        layers = []
        c_in = cfg.rows
        for i, (c, s) in enumerate(zip(cfg.tcn_filters, cfg.tcn_strides)):
            bn = BatchNorm((1, c, 1), (1, c, 1), axes=(0, 2), eps=cfg.bn_eps, momentum=cfg.bn_momentum)
            layers.append(ResidualLayer(c_in, c, cfg.filter_size, s, rng, bn, i == 0, cfg.padding))
            c_in = c
        self.layers = layers

    def __call__(self, x: Tensor) -> list[Tensor]:
        return _stack(self.layers, x)


class ResBjcn(Module):
    """Body-joints branch. Activations come out as (B, N_l, M)."""

    def __init__(self, cfg: ResTcnConfig, rng: np.random.Generator) -> None:
        if cfg.bjcn_downsample_factor > cfg.frames:
            raise InvalidArgumentError(
                f"downsample factor {cfg.bjcn_downsample_factor} exceeds frame count {cfg.frames}"
            )
        self.factor = cfg.bjcn_downsample_factor
        # Shared size-1 stride-s filter applied to every row on its own; starts as
        # plain subsampling.
        self.downsample = Conv1d(1, 1, 1, rng, stride=self.factor, padding="valid")
        self.downsample.weight.values[...] = 1.0
        layers = []
        c_in = cfg.bjcn_frames
        m = cfg.rows
        for i, c in enumerate(cfg.bjcn_filters):
            bn = BatchNorm((1, c, 1), (1, c, m), axes=(0,), eps=cfg.bn_eps, momentum=cfg.bn_momentum)
            layers.append(ResidualLayer(c_in, c, 1, 1, rng, bn, i == 0, "same"))
            c_in = c
        self.layers = layers

    def subsample(self, x: Tensor) -> Tensor:
        b, m, n = x.shape
        if self.factor > n:
            raise InvalidArgumentError(f"downsample factor {self.factor} exceeds frame count {n}")
        y = self.downsample(ops.reshape(x, (b * m, 1, n)))
        y = ops.reshape(y, (b, m, y.shape[-1]))
        # rows become the convolved axis, subsampled time the channel axis
        return ops.transpose(y, (0, 2, 1))

    def __call__(self, x: Tensor) -> list[Tensor]:
        return _stack(self.layers, self.subsample(x))


@dataclass
class SkeletonOutput:
    logits: Tensor
    features: Tensor
    bottom: list[Tensor] = field(default_factory=list)

    def bottom_features(self, count: int = 4) -> list[np.ndarray]:
        """BJCN activations as (B, M, N_l) arrays for the first ``count`` layers."""
        return [a.values.transpose(0, 2, 1) for a in self.bottom[:count]]


class SkeletonNet(Module):
    """Res-TCN plus Res-BJCN, concatenated at the FC stage."""

    def __init__(self, cfg: ResTcnConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.tcn = ResTcn(cfg, rng)
        self.bjcn = ResBjcn(cfg, rng)
        self.fc_tcn = Linear(cfg.tcn_filters[-1] * cfg.tcn_out_frames, cfg.fc_tcn_width, rng)
        self.fc_bjcn = Linear(cfg.bjcn_filters[-1] * cfg.rows, cfg.fc_bjcn_width, rng)
        self.classifier = Linear(cfg.feature_width, cfg.num_classes, rng)

    def feature_modules(self) -> list[Module]:
        """Everything up to (and including) the concatenated feature layer."""
        return [self.tcn, self.bjcn, self.fc_tcn, self.fc_bjcn]

    def feature_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("classifier.")]

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> SkeletonOutput:
        cfg = self.cfg
        if x.ndim == 2:
            x = ops.reshape(x, (1,) + x.shape)
        if x.shape[1:] != (cfg.rows, cfg.frames):
            raise InvalidArgumentError(
                f"skeleton input must be (B, {cfg.rows}, {cfg.frames}), got {x.shape}"
            )
        tcn_acts = self.tcn(x)
        bjcn_acts = self.bjcn(x)
        drop = cfg.dropout if self.training else 0.0
        h_tcn = ops.relu(self.fc_tcn(ops.flatten(tcn_acts[-1])))
        h_tcn = ops.dropout(h_tcn, drop, rng)
        h_bjcn = ops.softmax(self.fc_bjcn(ops.flatten(bjcn_acts[-1])))
        features = ops.concat([h_tcn, h_bjcn], axis=1)
        logits = self.classifier(features)
        return SkeletonOutput(logits, features, bjcn_acts)


def build_res_tcn(cfg: ResTcnConfig, rng: np.random.Generator) -> ResTcn:
    return ResTcn(cfg, rng)


def build_bjcn_branch(cfg: ResTcnConfig, rng: np.random.Generator) -> ResBjcn:
    return ResBjcn(cfg, rng)


def build_skeleton_net(cfg: ResTcnConfig, seed_or_rng) -> SkeletonNet:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    return SkeletonNet(cfg, rng)


def forward_skeleton(
    net: SkeletonNet, batch, rng: Optional[np.random.Generator] = None
) -> SkeletonOutput:
    """Run the net on (B, M, N) data (array, Tensor or SkeletonSequence list)."""
    if isinstance(batch, SkeletonSequence):
        batch = batch.data[None]
    elif isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], SkeletonSequence):
        batch = np.stack([s.data for s in batch])
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    return net(x, rng)


# ---------------------------------------------------------------------------
# informativeness


@dataclass
class JointScoreVector:
    scores: np.ndarray
    source_layers: tuple[int, ...]

    def argmax(self) -> int:
        return int(np.argmax(self.scores))


def parse_layers(layers: LayerSelection) -> tuple[int, ...]:
    """Accept "sum", "all", an int, "2" or "1,3"; return sorted layer ids."""
    if isinstance(layers, str):
        key = layers.strip().lower()
        if key in ("sum", "all"):
            return (1, 2, 3, 4)
        key = key.replace("bjcn-", "")
        layers = [int(v) for v in key.split(",") if v.strip()]
    elif isinstance(layers, (int, np.integer)):
        layers = [int(layers)]
    sel = tuple(sorted({int(v) for v in layers}))
    if not sel:
        raise InvalidArgumentError("empty layer selection")
    bad = [v for v in sel if v < 1 or v > 4]
    if bad:
        raise InvalidArgumentError(
            f"layers {bad} requested; only BJCN layers 1-4 keep direct joint "
            "correspondence (after BJCN-4 it is not retained)"
        )
    return sel


def raw_joint_scores(features: Sequence[np.ndarray], layers: LayerSelection = "sum") -> np.ndarray:
    """Un-normalized per-joint sums over the selected layers.

    ``features[l - 1]`` is the layer-l activation map, shaped (M, N_l) for a
    single sample or (B, M, N_l) for a batch.
    """
    sel = parse_layers(layers)
    if len(features) < max(sel):
        raise InvalidArgumentError(f"need {max(sel)} feature maps, got {len(features)}")
    total = None
    for layer in sel:
        x = np.asarray(features[layer - 1], dtype=np.float64)
        m = x.shape[-2]
        if m % 3:
            raise InvalidArgumentError(f"feature rows {m} are not a multiple of 3")
        per_joint = x.reshape(x.shape[:-2] + (m // 3, 3 * x.shape[-1])).sum(axis=-1)
        total = per_joint if total is None else total + per_joint
    return total


def normalize_scores(raw: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1] along the last axis; all-equal rows become zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo = raw.min(axis=-1, keepdims=True)
    span = raw.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (raw - lo) / safe, 0.0)


def extract_informativeness(
    features: Sequence[np.ndarray], layers: LayerSelection = "sum"
) -> Union[JointScoreVector, np.ndarray]:
    """Per-joint informativeness in [0, 1].

    Returns a :class:`JointScoreVector` for unbatched features and a (B, J)
    array for batched ones.
    """
    sel = parse_layers(layers)
    scores = normalize_scores(raw_joint_scores(features, sel))
    if scores.ndim == 1:
        return JointScoreVector(scores, sel)
    return scores


def score_batch(net: SkeletonNet, batch: np.ndarray, layers: LayerSelection = "sum") -> np.ndarray:
    """Scores for a (B, M, N) batch evaluated with the net's current mode."""
    out = forward_skeleton(net, batch)
    return extract_informativeness(out.bottom_features(4), layers)


# ---------------------------------------------------------------------------
# file formats


def write_skeleton_file(path, frames: np.ndarray, joints_per_skeleton: int, skeleton_count: int) -> None:
    """Text format: header ``SKEL v1 K=<K> S=<S> T=<T>`` then one line per frame."""
    frames = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    m = joints_per_skeleton * skeleton_count * 3
    if frames.shape[1] != m:
        raise InvalidArgumentError(f"expected {m} values per frame, got {frames.shape[1]}")
    lines = [f"SKEL v1 K={joints_per_skeleton} S={skeleton_count} T={len(frames)}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in frames]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_skeleton_file(path) -> tuple[np.ndarray, int, int]:
    """Return (frames (T, S*K*3), K, S)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InvalidArgumentError(f"{path}: empty skeleton file")
    head = lines[0].split()
    if head[:2] != ["SKEL", "v1"]:
        raise InvalidArgumentError(f"{path}: bad header {lines[0]!r}")
    fields = dict(tok.split("=", 1) for tok in head[2:])
    try:
        k, s, t = int(fields["K"]), int(fields["S"]), int(fields["T"])
    except (KeyError, ValueError) as exc:
        raise InvalidArgumentError(f"{path}: bad header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != t:
        raise InvalidArgumentError(f"{path}: header says T={t} but found {len(body)} frames")
    frames = np.array([[float(v) for v in ln.split()] for ln in body], dtype=np.float64)
    if frames.shape[1:] != (s * k * 3,):
        raise InvalidArgumentError(f"{path}: expected {s * k * 3} values per frame")
    return frames, k, s


def format_scores(scores: np.ndarray) -> str:
    return "".join(f"{k} {v:.6f}\n" for k, v in enumerate(np.asarray(scores)))


def parse_scores(text: str) -> np.ndarray:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    return np.array([float(v) for _, v in sorted((int(i), v) for i, v in rows)])

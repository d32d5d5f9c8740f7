"""Synthetic multimodal action benchmark.

Each class is defined by one primary joint performing a fixed motion
(oscillation, thrust or drift along a class direction) at amplitude 1. The
other joints carry weaker random motions. Skeletons are reported in body
coordinates; each viewpoint rotates and shifts the image plane only. Flow
frames are rendered by splatting every joint's frame-to-frame 3D
displacement into a small disc around its projection; background noise at
level ``sigma`` adds white noise plus ``round(10 * sigma)`` moving clutter
blobs that imitate joint motion away from the body.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .flow import FlowField, read_flow_file, write_flow_file
from .skeleton import SkeletonSequence, normalize_skeleton, read_skeleton_file, write_skeleton_file

JOINT_NAMES = ("head", "left_hand", "right_hand", "left_foot", "right_foot")
# meters, body frame, y up. Hands set the x extent and head/feet the y
# extent of the pose; class motions stay inside that box so that per-plane
# min-max normalization keeps the other joints where they are.
TEMPLATE = np.array(
    [
        [0.0, 1.6, 0.0],
        [-0.55, 0.95, 0.0],
        [0.55, 0.95, 0.0],
        [-0.15, 0.0, 0.0],
        [0.15, 0.0, 0.0],
    ]
)
MOTION_TYPES = ("oscillation", "thrust", "drift")
SPEED_UNIT = 0.03  # mean speed (m/frame) of amplitude 1, any motion type
PIXELS_PER_M = 16.0
SPLAT_RADIUS = 3
VIEW_ANGLES_DEG = (-15.0, 0.0, 15.0, -30.0, 30.0)

_DIRECTIONS = {
    "x": (1.0, 0.0, 0.0),
    "y": (0.0, 1.0, 0.0),
    "up-left": (-0.6, 0.8, 0.0),
}

# (primary joint, motion type, direction) of the built-in classes
CLASS_TABLE = (
    (2, "oscillation", "y"),
    (1, "thrust", "y"),
    (4, "oscillation", "x"),
    (3, "drift", "up-left"),
    (0, "oscillation", "x"),
    (2, "drift", "y"),
    (3, "oscillation", "x"),
    (0, "thrust", "x"),
)


@dataclass(frozen=True)
class JointMotion:
    joint: int
    motion: str
    amplitude: float
    frequency: float = 2.0  # cycles per sequence
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.motion not in MOTION_TYPES:
            raise InvalidArgumentError(f"unknown motion type {self.motion!r}")
        if self.amplitude < 0:
            raise InvalidArgumentError("amplitude must be non-negative")


@dataclass(frozen=True)
class SyntheticAction:
    label: int
    programs: tuple[JointMotion, ...]
    sigma: float = 0.0
    actor: int = 0
    view: int = 0
    frames: int = 60
    height: int = 36
    width: int = 36

    def primary_joint(self) -> int:
        return max(self.programs, key=lambda p: p.amplitude).joint


@dataclass
class Sample:
    sample_id: str
    label: int
    actor: int
    view: int
    skeleton_raw: np.ndarray  # (T, K*3) body-frame meters
    flow: FlowField
    primary_joint: int = -1

    def skeleton(self, max_frames: int = 60) -> SkeletonSequence:
        return normalize_skeleton(self.skeleton_raw, max_frames, len(JOINT_NAMES))


@dataclass
class BenchmarkConfig:
    num_classes: int = 4
    actors: int = 4
    views: int = 3
    samples_per_class: int = 40
    frames: int = 60
    sigma: float = 0.0
    height: int = 36
    width: int = 36
    distractor_amplitude: tuple[float, float] = (0.1, 0.3)

    def __post_init__(self) -> None:
        if not 1 <= self.num_classes <= len(CLASS_TABLE):
            raise InvalidArgumentError(f"num_classes must be in [1, {len(CLASS_TABLE)}]")
        if self.views > len(VIEW_ANGLES_DEG):
            raise InvalidArgumentError(f"at most {len(VIEW_ANGLES_DEG)} views are defined")
        if self.actors < 1 or self.views < 1 or self.samples_per_class < 1:
            raise InvalidArgumentError("actors, views and samples_per_class must be positive")
        if self.frames < 2:
            raise InvalidArgumentError("need at least 2 frames")
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be non-negative")


# ---------------------------------------------------------------------------
# motion


def motion_profile(motion: str, frames: int, frequency: float, phase: float = 0.0) -> np.ndarray:
    """Unit-amplitude 1D displacement over time, rescaled to mean speed 1.

    Scaling by mean |p(t+1) - p(t)| makes the mean speed of any motion type
    proportional to its amplitude alone.
    """
    t = np.arange(frames + 1, dtype=np.float64) / frames
    if motion == "oscillation":
        p = np.sin(2 * np.pi * frequency * t + phase)
    elif motion == "thrust":
        # push-pull with a dwell at the rest pose; odd, so zero mean over phase
        s = np.sin(2 * np.pi * frequency * t + phase)
        p = s * np.abs(s)
    elif motion == "drift":
        # slow sweep out and back, one cycle per two oscillation periods
        u = (0.5 * frequency * t + phase / (2 * np.pi)) % 1.0
        p = 1.0 - 2.0 * np.abs(2.0 * u - 1.0)
    else:
        raise InvalidArgumentError(f"unknown motion type {motion!r}")
    speed = np.abs(np.diff(p)).mean()
    return p / speed if speed > 0 else p


def joint_trajectories(programs: Sequence[JointMotion], frames: int, joint_count: int) -> np.ndarray:
    """(frames + 1, K, 3) displacement of every joint from its rest pose."""
    out = np.zeros((frames + 1, joint_count, 3))
    for prog in programs:
        prof = motion_profile(prog.motion, frames, prog.frequency, prog.phase)
        d = np.asarray(prog.direction, dtype=np.float64)
        out[:, prog.joint] += (SPEED_UNIT * prog.amplitude) * prof[:, None] * d[None]
    return out


def class_program(label: int, rng: np.random.Generator, distractor=(0.1, 0.3), speed: float = 1.0):
    """Motion programs for one instance of ``label``: primary plus distractors."""
    joint, motion, direction = CLASS_TABLE[label]
    freq = 2.0 * speed
    progs = [JointMotion(joint, motion, 1.0, freq, _DIRECTIONS[direction], float(rng.uniform(0, 2 * np.pi)))]
    for k in range(len(JOINT_NAMES)):
        if k == joint:
            continue
        theta = rng.uniform(0, 2 * np.pi)
        d = (math.cos(theta), math.sin(theta), 0.0)
        progs.append(
            JointMotion(
                k,
                MOTION_TYPES[int(rng.integers(0, len(MOTION_TYPES)))],
                float(rng.uniform(*distractor)),
                float(rng.uniform(2.0, 3.0)),
                tuple(float(v) for v in d),
                float(rng.uniform(0, 2 * np.pi)),
            )
        )
    return tuple(progs)


def actor_params(actor: int) -> tuple[float, np.ndarray, float]:
    """(scale, per-joint rest offset, tempo) of an actor, fixed by its id."""
    rng = np.random.default_rng([7919, actor])
    scale = float(rng.uniform(0.9, 1.1))
    offset = np.zeros_like(TEMPLATE)
    offset[:, :2] = rng.uniform(-0.03, 0.03, size=(len(TEMPLATE), 2))
    return scale, offset, float(rng.uniform(0.85, 1.15))


def view_params(view: int, height: int, width: int) -> tuple[float, np.ndarray]:
    """(rotation radians, pixel translation) of a viewpoint."""
    angle = math.radians(VIEW_ANGLES_DEG[view % len(VIEW_ANGLES_DEG)])
    rng = np.random.default_rng([104729, view])
    return angle, rng.uniform(-2.0, 2.0, size=2)


def _rotate_xy(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    out = v.copy()
    out[..., 0] = c * v[..., 0] - s * v[..., 1]
    out[..., 1] = s * v[..., 0] + c * v[..., 1]
    return out


def project(points: np.ndarray, height: int, width: int, shift: np.ndarray) -> np.ndarray:
    """Orthographic projection of camera-space points (y up) to (x, y) pixels."""
    x = (width - 1) / 2.0 + PIXELS_PER_M * points[..., 0] + shift[0]
    y = (height - 1) / 2.0 - PIXELS_PER_M * (points[..., 1] - 0.8) + shift[1]
    return np.stack([x, y], axis=-1)


def _splat(frame: np.ndarray, cx: float, cy: float, vec: np.ndarray, r: int) -> None:
    h, w = frame.shape[:2]
    a, b = int(math.floor(cx)), int(math.floor(cy))
    y0, y1 = max(0, b - r), min(h, b + r + 1)
    x0, x1 = max(0, a - r), min(w, a + r + 1)
    if y0 >= y1 or x0 >= x1:
        return
    ys = np.arange(y0, y1)[:, None]
    xs = np.arange(x0, x1)[None, :]
    disc = (xs - a) ** 2 + (ys - b) ** 2 <= r * r
    frame[y0:y1, x0:x1][disc] += vec


def simulate(action: SyntheticAction, seed) -> tuple[np.ndarray, FlowField]:
    """Raw body-frame skeleton (T, K*3) and the flow field seen by the camera.

    The viewpoint only rotates and shifts the image plane; the skeleton
    stream is reported in body coordinates.
    """
    rng = np.random.default_rng(seed)
    t, h, w = action.frames, action.height, action.width
    k = len(JOINT_NAMES)
    scale, offset, _ = actor_params(action.actor)
    angle, shift = view_params(action.view, h, w)
    rest = (TEMPLATE + offset) * scale
    world = rest[None] + joint_trajectories(action.programs, t, k)
    if action.sigma > 0:
        world = world + rng.normal(0.0, 0.02 * action.sigma, size=world.shape)
    cam = _rotate_xy(world, angle)
    pix = project(cam, h, w, shift)
    pix[..., 0] = np.clip(pix[..., 0], 0.0, w - 1e-3)
    pix[..., 1] = np.clip(pix[..., 1], 0.0, h - 1e-3)

    vectors = np.zeros((t, h, w, 3))
    motion = cam[1:] - cam[:-1]  # (T, K, 3)
    for f in range(t):
        for j in range(k):
            if np.any(motion[f, j]):
                _splat(vectors[f], pix[f, j, 0], pix[f, j, 1], motion[f, j], SPLAT_RADIUS)
    if action.sigma > 0:
        _add_clutter(vectors, action, rng)
        vectors += rng.normal(0.0, action.sigma * SPEED_UNIT, size=vectors.shape)
    vectors = vectors.astype(np.float32).astype(np.float64)
    joints2d = pix[:t].astype(np.float32).astype(np.float64)
    return world[:t].reshape(t, k * 3), FlowField(vectors, joints2d, k, 1)


def _add_clutter(vectors: np.ndarray, action: SyntheticAction, rng: np.random.Generator) -> None:
    """Moving blobs that copy a random class's primary motion at a random spot."""
    t, h, w = vectors.shape[:3]
    for _ in range(int(round(10 * action.sigma))):
        label = int(rng.integers(0, len(CLASS_TABLE)))
        _, motion, direction = CLASS_TABLE[label]
        prog = JointMotion(0, motion, 1.0, 2.0, _DIRECTIONS[direction], float(rng.uniform(0, 2 * np.pi)))
        path = joint_trajectories([prog], t, 1)[:, 0]
        path = _rotate_xy(path, float(rng.uniform(-np.pi, np.pi)))
        centre = np.array([rng.uniform(2, w - 3), rng.uniform(2, h - 3)])
        step = path[1:] - path[:-1]
        for f in range(t):
            cx = centre[0] + PIXELS_PER_M * path[f, 0]
            cy = centre[1] - PIXELS_PER_M * path[f, 1]
            _splat(vectors[f], cx, cy, step[f], SPLAT_RADIUS)


def generate(action: SyntheticAction, seed, max_frames: Optional[int] = None):
    """(SkeletonSequence, FlowField, label) for one action instance."""
    raw, flow = simulate(action, seed)
    seq = normalize_skeleton(raw, max_frames or action.frames, len(JOINT_NAMES))
    return seq, flow, action.label


def make_action(label: int, actor: int, view: int, cfg: BenchmarkConfig, rng: np.random.Generator) -> SyntheticAction:
    _, _, tempo = actor_params(actor)
    programs = class_program(label, rng, cfg.distractor_amplitude, tempo)
    return SyntheticAction(label, programs, cfg.sigma, actor, view, cfg.frames, cfg.height, cfg.width)


def generate_benchmark(cfg: BenchmarkConfig, seed: int) -> list[Sample]:
    """Balanced sample set; actor and view cycle so every cell is populated.

    Each sample draws from its own child of ``SeedSequence(seed)``, so
    samples can be generated independently and in any order.
    """
    children = np.random.SeedSequence(seed).spawn(cfg.num_classes * cfg.samples_per_class)
    samples = []
    for label in range(cfg.num_classes):
        for i in range(cfg.samples_per_class):
            n = label * cfg.samples_per_class + i
            actor = i % cfg.actors
            view = (i // cfg.actors) % cfg.views
            prog_seed, render_seed = children[n].spawn(2)
            action = make_action(label, actor, view, cfg, np.random.default_rng(prog_seed))
            raw, flow = simulate(action, render_seed)
            samples.append(
                Sample(f"s{n:05d}", label, actor, view, raw, flow, action.primary_joint())
            )
    return samples


def joint_flow_magnitude(flow: FlowField, radius: int = SPLAT_RADIUS) -> np.ndarray:
    """Mean flow magnitude inside each joint's disc over all frames, (J,)."""
    v = np.linalg.norm(flow.vectors, axis=-1)
    t, h, w = v.shape
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    out = np.zeros(flow.joints2d.shape[1])
    for f in range(t):
        for j, (x, y) in enumerate(flow.joints2d[f]):
            disc = (xs - math.floor(x)) ** 2 + (ys - math.floor(y)) ** 2 <= radius * radius
            out[j] += v[f][disc].mean()
    return out / t


# ---------------------------------------------------------------------------
# protocol


def make_splits(
    samples: Sequence[Sample],
    protocol: str,
    train_actors: Sequence[int] = (0, 1),
    test_view: int = 2,
) -> tuple[list[Sample], list[Sample]]:
    """Cross-subject partitions by actor; cross-view holds out one view."""
    actors = {s.actor for s in samples}
    views = {s.view for s in samples}
    if protocol == "cross_subject":
        if len(actors) < 2:
            raise InvalidArgumentError("cross_subject needs at least 2 actors")
        keep = set(train_actors)
        if not keep & actors or not actors - keep:
            raise InvalidArgumentError(f"train actors {sorted(keep)} do not split actors {sorted(actors)}")
        pick = lambda s: s.actor in keep  # noqa: E731
    elif protocol == "cross_view":
        if len(views) < 3:
            raise InvalidArgumentError("cross_view needs at least 3 viewpoints")
        if test_view not in views:
            raise InvalidArgumentError(f"view {test_view} not present")
        pick = lambda s: s.view != test_view  # noqa: E731
    else:
        raise InvalidArgumentError(f"unknown protocol {protocol!r}")
    train = [s for s in samples if pick(s)]
    test = [s for s in samples if not pick(s)]
    return train, test


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, cols: predicted
    predictions: list[int] = field(default_factory=list)

    def report(self) -> str:
        lines = [f"accuracy {self.accuracy:.6f}"]
        for i, row in enumerate(self.confusion):
            lines.append(f"class {i} " + " ".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion_counts(labels: Sequence[int], predictions: Sequence[int], num_classes: int) -> EvalResult:
    if len(labels) == 0:
        raise InvalidArgumentError("cannot evaluate an empty split")
    if len(labels) != len(predictions):
        raise InvalidArgumentError(f"{len(labels)} labels but {len(predictions)} predictions")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for y, p in zip(labels, predictions):
        conf[int(y), int(p)] += 1
    return EvalResult(float(np.trace(conf)) / len(labels), conf, [int(p) for p in predictions])


def evaluate(model: Callable[[Sample], int], samples: Sequence[Sample], num_classes: Optional[int] = None) -> EvalResult:
    """Accuracy and confusion matrix of ``model`` (sample -> class id)."""
    if len(samples) == 0:
        raise InvalidArgumentError("cannot evaluate an empty split")
    labels = [s.label for s in samples]
    preds = [int(model(s)) for s in samples]
    n = num_classes or max(max(labels), max(preds)) + 1
    return confusion_counts(labels, preds, n)


# ---------------------------------------------------------------------------
# files


def save_dataset(samples: Sequence[Sample], out_dir) -> Path:
    """Write skeleton/flow files and ``manifest.txt``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "skeleton").mkdir(parents=True, exist_ok=True)
    (out_dir / "flow").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        skel = Path("skeleton") / f"{s.sample_id}.skel"
        flw = Path("flow") / f"{s.sample_id}.flw"
        write_skeleton_file(out_dir / skel, s.skeleton_raw, len(JOINT_NAMES), 1)
        write_flow_file(out_dir / flw, s.flow)
        lines.append(f"{s.sample_id} {s.label} {s.actor} {s.view} {skel.as_posix()} {flw.as_posix()}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(manifest) -> list[Sample]:
    manifest = Path(manifest)
    root = manifest.parent
    samples = []
    for n, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise InvalidArgumentError(f"{manifest}:{n}: expected 6 fields, got {len(parts)}")
        sid, label, actor, view, skel, flw = parts
        raw, _, _ = read_skeleton_file(root / skel)
        flow = read_flow_file(root / flw)
        samples.append(Sample(sid, int(label), int(actor), int(view), raw, flow, CLASS_TABLE[int(label)][0]))
    return samples

"""Scene-flow colorization and clip preparation.

Frames are kept as (T, H, W, 3) float arrays with values in [0, 1]; joint
positions as (T, J, 2) arrays of (x, y) pixel coordinates with a matching
(T, J) boolean validity mask. A clip handed to the 3D convnet is a
:class:`FlowClip` whose tensor is laid out (3, L, H, W).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySequenceError, InvalidArgumentError
from .imageio import write_ppm

FLOW_MAGIC = b"FLW1"


@dataclass
class FlowField:
    """Dense 3D motion per pixel plus the projected 2D joints of each frame.

    ``vectors`` is (T, H, W, 3) in meters/frame; ``joints2d`` is (T, S*K, 2)
    with (x, y) pixel coordinates.
    """

    vectors: np.ndarray
    joints2d: np.ndarray
    joints_per_skeleton: int
    skeleton_count: int = 1

    def __post_init__(self) -> None:
        v, j = self.vectors, self.joints2d
        if v.ndim != 4 or v.shape[3] != 3:
            raise InvalidArgumentError(f"vectors must be (T, H, W, 3), got {v.shape}")
        jc = self.joints_per_skeleton * self.skeleton_count
        if j.shape != (v.shape[0], jc, 2):
            raise InvalidArgumentError(f"joints2d must be ({v.shape[0]}, {jc}, 2), got {j.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("flow vectors must be finite")
        h, w = v.shape[1:3]
        if np.any(j[..., 0] < 0) or np.any(j[..., 0] >= w) or np.any(j[..., 1] < 0) or np.any(j[..., 1] >= h):
            raise InvalidArgumentError("joints2d must lie inside [0, width) x [0, height)")

    @property
    def frames(self) -> int:
        return self.vectors.shape[0]

    @property
    def height(self) -> int:
        return self.vectors.shape[1]

    @property
    def width(self) -> int:
        return self.vectors.shape[2]


@dataclass
class FlowClip:
    """A fixed-length clip: tensor (3, L, H, W) in [0, 1] and aligned joints."""

    tensor: np.ndarray
    joints2d: np.ndarray
    valid: np.ndarray
    start: int = 0
    real_frames: int = 0

    @property
    def length(self) -> int:
        return self.tensor.shape[1]


# ---------------------------------------------------------------------------
# colorization


def colorize_flow(field) -> np.ndarray:
    """Map each motion plane linearly onto one color channel.

    The range of a plane is taken symmetric around zero over the whole
    sequence, ``[-A, A]`` with ``A = max |v|``, so zero motion is always 0.5
    and the extreme component maps to 0 or 1. An all-zero plane is 0.5.
    """
    v = field.vectors if isinstance(field, FlowField) else np.asarray(field, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("flow vectors must be finite")
    v = np.asarray(v, dtype=np.float64)
    amp = np.abs(v).reshape(-1, 3).max(axis=0) if v.size else np.zeros(3)
    safe = np.where(amp > 0, amp, 1.0)
    return np.where(amp > 0, 0.5 + v / (2.0 * safe), 0.5)


def export_preview(frames: np.ndarray, out_dir, prefix: str = "frame") -> list[Path]:
    """Write each colorized frame as an 8-bit PPM."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = out_dir / f"{prefix}_{i:04d}.ppm"
        write_ppm(p, frame)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# temporal handling


def temporal_downsample(frames: np.ndarray, factor: int, joints2d=None, valid=None):
    """Keep frames 0, factor, 2*factor, ...; joints follow the same indices.

    Returns just the frames when no joints are given, otherwise a tuple.
    """
    if factor < 1:
        raise InvalidArgumentError(f"downsample factor must be >= 1, got {factor}")
    out = frames[::factor]
    if joints2d is None:
        return out
    res = (out, joints2d[::factor])
    if valid is not None:
        res += (valid[::factor],)
    return res


def clip_starts(frame_count: int, clip_len: int, overlap: int) -> list[tuple[int, int]]:
    """(start, real_frame_count) of every clip produced by :func:`split_clips`."""
    if not 0 <= overlap < clip_len:
        raise InvalidArgumentError(f"need clip_len > overlap >= 0, got {clip_len}, {overlap}")
    if 2 * frame_count < clip_len:
        raise EmptySequenceError(
            f"{frame_count} frames is fewer than half a clip ({clip_len}/2)"
        )
    stride = clip_len - overlap
    out = []
    start = 0
    while start + clip_len <= frame_count:
        out.append((start, clip_len))
        start += stride
    covered = out[-1][0] + clip_len if out else 0
    if covered < frame_count:
        real = frame_count - start
        if 2 * real >= clip_len:
            out.append((start, real))
    return out


def split_clips(
    frames: np.ndarray,
    joints2d: np.ndarray,
    valid: Optional[np.ndarray] = None,
    clip_len: int = 16,
    overlap: int = 8,
) -> list[FlowClip]:
    """Cut (T, H, W, 3) frames into overlapping clips.

    Clips start every ``clip_len - overlap`` frames while they fit. If frames
    remain uncovered and the next clip would hold at least half a clip of
    real frames, it is zero-padded and kept; otherwise the tail is dropped.
    Padded frames have no valid joints.
    """
    t = frames.shape[0]
    if valid is None:
        valid = np.ones(joints2d.shape[:2], dtype=bool)
    clips = []
    for start, real in clip_starts(t, clip_len, overlap):
        f = np.zeros((clip_len,) + frames.shape[1:], dtype=np.float64)
        f[:real] = frames[start : start + real]
        j = np.zeros((clip_len,) + joints2d.shape[1:], dtype=joints2d.dtype)
        j[:real] = joints2d[start : start + real]
        ok = np.zeros((clip_len, joints2d.shape[1]), dtype=bool)
        ok[:real] = valid[start : start + real]
        clips.append(FlowClip(np.ascontiguousarray(f.transpose(3, 0, 1, 2)), j, ok, start, real))
    return clips


# ---------------------------------------------------------------------------
# geometry


def _resize_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_out == n_in:
        return a
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    shape = [1] * a.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(a, i0, axis=axis) * (1.0 - frac) + np.take(a, i1, axis=axis) * frac


def bilinear_resize(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize (T, H, W, C) frames with pixel-center bilinear sampling."""
    return _resize_axis(_resize_axis(frames, height, 1), width, 2)


def center_box(height: int, width: int, crop_h: int, crop_w: int) -> tuple[int, int, int, int]:
    return ((height - crop_h) // 2, (width - crop_w) // 2, crop_h, crop_w)


def random_box(height: int, width: int, crop_h: int, crop_w: int, rng: np.random.Generator):
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    return (top, left, crop_h, crop_w)


def crop_resize(
    frames: np.ndarray,
    joints2d: np.ndarray,
    crop_size: Sequence[int],
    target_size: Sequence[int],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    valid: Optional[np.ndarray] = None,
    box: Optional[Sequence[int]] = None,
):
    """Crop then bilinearly resize frames and map joints with the same affine.

    The crop is centered in evaluation mode and drawn from ``rng`` in
    training mode, unless ``box = (top, left, height, width)`` is given.
    Joints become ``floor((x - left) * W' / crop_w)`` (likewise for y). A
    joint that falls outside the crop is clamped to the border and marked
    invalid so masks skip it.

    Returns (frames, joints (int64), valid).
    """
    t, h, w = frames.shape[:3]
    ch, cw = (int(v) for v in crop_size)
    th, tw = (int(v) for v in target_size)
    if box is None:
        if training:
            if rng is None:
                raise InvalidArgumentError("training-mode crop needs a seeded generator")
            box = random_box(h, w, ch, cw, rng)
        else:
            box = center_box(h, w, ch, cw)
    top, left, ch, cw = (int(v) for v in box)
    if top < 0 or left < 0 or ch < 1 or cw < 1 or top + ch > h or left + cw > w:
        raise InvalidArgumentError(f"crop box {tuple(box)} outside frame {h}x{w}")
    out = bilinear_resize(frames[:, top : top + ch, left : left + cw], th, tw)
    if valid is None:
        valid = np.ones(joints2d.shape[:2], dtype=bool)
    rel_x = np.asarray(joints2d[..., 0], dtype=np.float64) - left
    rel_y = np.asarray(joints2d[..., 1], dtype=np.float64) - top
    inside = (rel_x >= 0) & (rel_x < cw) & (rel_y >= 0) & (rel_y < ch)
    x = np.clip(np.floor(rel_x * tw / cw), 0, tw - 1)
    y = np.clip(np.floor(rel_y * th / ch), 0, th - 1)
    joints = np.stack([x, y], axis=-1).astype(np.int64)
    return out, joints, valid & inside


# ---------------------------------------------------------------------------
# file format


def write_flow_file(path, field: FlowField) -> None:
    """``FLW1`` + u32 T,H,W,K,S + f32 vectors (T,H,W,3) + f32 joints (T,S,K,2)."""
    t, h, w = field.vectors.shape[:3]
    header = FLOW_MAGIC + struct.pack("<5I", t, h, w, field.joints_per_skeleton, field.skeleton_count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.vectors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(field.joints2d, dtype="<f4").tobytes())


def read_flow_file(path) -> FlowField:
    raw = Path(path).read_bytes()
    if raw[:4] != FLOW_MAGIC:
        raise InvalidArgumentError(f"{path}: bad flow magic {raw[:4]!r}")
    t, h, w, k, s = struct.unpack("<5I", raw[4:24])
    nv = t * h * w * 3
    nj = t * s * k * 2
    if len(raw) != 24 + 4 * (nv + nj):
        raise InvalidArgumentError(f"{path}: size does not match header")
    vectors = np.frombuffer(raw, dtype="<f4", count=nv, offset=24).reshape(t, h, w, 3)
    joints = np.frombuffer(raw, dtype="<f4", count=nj, offset=24 + 4 * nv).reshape(t, s * k, 2)
    return FlowField(vectors.astype(np.float64), joints.astype(np.float64), k, s)

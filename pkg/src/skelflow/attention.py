"""Skeleton-guided spatial attention masks.

Level 1 marks every pixel within radius ``r`` of a joint with 1. Level 2
puts ``1 + score`` there instead, averaging the scores of all joints whose
discs overlap at a pixel. The mask is applied as ``F = (1 + M) * Y`` and is
a constant of the backward pass, so the gradient into ``Y`` is scaled by
``1 + M``.

Joint arrays are (..., J, 2) integer (x, y) pixel coordinates with a
matching (..., J) validity mask; invalid joints contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .imageio import to_uint8, write_pgm
from .tensor import Tensor, ops


@dataclass
class AttentionMask:
    """Mask values for one clip, stored once and repeated channel-wise."""

    base: np.ndarray  # (l, h, w)
    level: int
    channels: int = 1

    @property
    def values(self) -> np.ndarray:
        return np.broadcast_to(self.base, (self.channels,) + self.base.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.channels,) + self.base.shape


def radius_for_width(w: int) -> int:
    """ceil(0.05 * w), computed exactly as ceil(w / 20)."""
    if w < 1:
        raise InvalidArgumentError(f"width must be >= 1, got {w}")
    return -(-int(w) // 20)


def disc_cover(joints: np.ndarray, valid: Optional[np.ndarray], h: int, w: int, r: int) -> np.ndarray:
    """Boolean (..., J, h, w): pixel (x, y) with (x-a)^2 + (y-b)^2 <= r^2.

    ``r <= 0`` means no characteristic area at all.
    """
    joints = np.asarray(joints)
    lead = joints.shape[:-1]
    if r <= 0:
        return np.zeros(lead + (h, w), dtype=bool)
    a = joints[..., 0].astype(np.int64)[..., None, None]
    b = joints[..., 1].astype(np.int64)[..., None, None]
    xs = np.arange(w, dtype=np.int64)
    ys = np.arange(h, dtype=np.int64)[:, None]
    cover = (xs - a) ** 2 + (ys - b) ** 2 <= r * r
    if valid is not None:
        cover &= np.asarray(valid, dtype=bool)[..., None, None]
    return cover


def binary_mask_values(joints, valid, h: int, w: int, r: int) -> np.ndarray:
    """(..., h, w) float mask in {0, 1}; leading axes are e.g. (B, l)."""
    return disc_cover(joints, valid, h, w, r).any(axis=-3).astype(np.float64)


def weighted_mask_values(joints, valid, h: int, w: int, r: int, scores: np.ndarray) -> np.ndarray:
    """(..., h, w) mask: 1 + mean score of covering joints, 0 elsewhere.

    ``scores`` has shape (J,) or broadcasts against the leading axes of
    ``joints`` minus the frame axis, e.g. (B, 1, J) for joints (B, l, J, 2).
    """
    cover = disc_cover(joints, valid, h, w, r)
    count = cover.sum(axis=-3)
    total = (cover * np.asarray(scores, dtype=np.float64)[..., None, None]).sum(axis=-3)
    safe = np.where(count > 0, count, 1)
    return np.where(count > 0, 1.0 + total / safe, 0.0)


def _check_joints(joints, valid, dims):
    l = dims[0]
    joints = np.asarray(joints)
    if joints.ndim != 3 or joints.shape[0] != l or joints.shape[2] != 2:
        raise InvalidArgumentError(f"joints must be ({l}, J, 2), got {joints.shape}")
    if valid is None:
        valid = np.ones(joints.shape[:2], dtype=bool)
    return joints, valid


def build_binary_mask(joints2d, dims: Sequence[int], r: int, valid=None, channels: int = 1) -> AttentionMask:
    l, h, w = dims
    joints, valid = _check_joints(joints2d, valid, dims)
    return AttentionMask(binary_mask_values(joints, valid, h, w, r), 1, channels)


def build_weighted_mask(
    joints2d, dims: Sequence[int], r: int, scores, valid=None, channels: int = 1
) -> AttentionMask:
    l, h, w = dims
    joints, valid = _check_joints(joints2d, valid, dims)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (joints.shape[1],):
        raise InvalidArgumentError(
            f"got {scores.shape[0] if scores.ndim else 0} scores for {joints.shape[1]} joints"
        )
    return AttentionMask(weighted_mask_values(joints, valid, h, w, r, scores), 2, channels)


def downsample_joint_coords(joints2d, from_dims: Sequence[int], to_dims: Sequence[int]) -> np.ndarray:
    """(a, b) -> (floor(a * w' / w), floor(b * h' / h)) for dims given as (h, w)."""
    h, w = from_dims
    h2, w2 = to_dims
    if h2 > h or w2 > w:
        raise InvalidArgumentError(f"cannot upsample joints from {tuple(from_dims)} to {tuple(to_dims)}")
    j = np.asarray(joints2d)
    if np.issubdtype(j.dtype, np.integer):
        return np.stack([j[..., 0] * w2 // w, j[..., 1] * h2 // h], axis=-1)
    return np.stack([np.floor(j[..., 0] * w2 / w), np.floor(j[..., 1] * h2 / h)], axis=-1).astype(np.int64)


def interpolate_temporal_coords(joints2d, valid=None, pool: int = 2, axis: int = 0):
    """Merge every ``pool`` consecutive frames into their rounded midpoint.

    An odd tail is padded by repeating the last frame. Only valid entries are
    averaged; the result is rounded half-up. Returns (joints, valid).
    """
    j = np.moveaxis(np.asarray(joints2d, dtype=np.int64), axis, 0)
    v = np.ones(j.shape[:-1], dtype=bool) if valid is None else np.moveaxis(np.asarray(valid, dtype=bool), axis, 0)
    l = j.shape[0]
    rem = (-l) % pool
    if rem:
        j = np.concatenate([j, np.repeat(j[-1:], rem, axis=0)], axis=0)
        v = np.concatenate([v, np.repeat(v[-1:], rem, axis=0)], axis=0)
    n = j.shape[0] // pool
    jg = j.reshape((n, pool) + j.shape[1:])
    vg = v.reshape((n, pool) + v.shape[1:])
    count = vg.sum(axis=1)
    sums = (jg * vg[..., None]).sum(axis=1)
    safe = np.maximum(count, 1)[..., None]
    mid = (2 * sums + safe) // (2 * safe)
    return np.moveaxis(mid, 0, axis), np.moveaxis(count > 0, 0, axis)


def apply_attention(y: Tensor, mask) -> Tensor:
    """F = (1 + M) * Y with M held constant.

    ``mask`` is an :class:`AttentionMask` or an array whose shape equals
    ``y.shape`` up to a channel axis of size 1 (axis 0 unbatched, axis 1
    batched).
    """
    m = mask.base[None] if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=np.float64)
    ch_axis = 0 if y.ndim == 4 else 1
    expected_ok = m.ndim == y.ndim and all(
        ms == ys or (i == ch_axis and ms == 1) for i, (ms, ys) in enumerate(zip(m.shape, y.shape))
    )
    if not expected_ok:
        raise InvalidArgumentError(f"mask shape {m.shape} does not match feature shape {y.shape}")
    return ops.mul(y, Tensor(1.0 + m))


def export_mask_pgm(mask, out_dir, prefix: str = "mask") -> list[Path]:
    """One P5 image per frame with value round(127.5 * m): 0->0, 1->128, 2->255."""
    base = mask.base if isinstance(mask, AttentionMask) else np.asarray(mask)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(base):
        p = out_dir / f"{prefix}_{i:04d}.pgm"
        write_pgm(p, to_uint8(frame, 127.5))
        paths.append(p)
    return paths

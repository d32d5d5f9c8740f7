import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelflow.errors import EmptySequenceError, InvalidArgumentError
from skelflow.flow import (
    FlowField,
    clip_starts,
    colorize_flow,
    crop_resize,
    export_preview,
    read_flow_file,
    split_clips,
    temporal_downsample,
    write_flow_file,
)
from skelflow.imageio import read_pnm


def field(vectors, joints=None):
    t, h, w = vectors.shape[:3]
    if joints is None:
        joints = np.zeros((t, 1, 2))
    return FlowField(np.asarray(vectors, dtype=np.float64), np.asarray(joints, dtype=np.float64), joints.shape[1], 1)


# -- colorization ---------------------------------------------------------------


def test_symmetric_plane_maps_zero_to_half():
    v = np.zeros((2, 3, 3, 3))
    v[0, 0, 0] = (-2.0, -1.0, -4.0)
    v[1, 2, 2] = (2.0, 1.0, 4.0)
    c = colorize_flow(field(v))
    assert np.all(c[0, 1, 1] == 0.5)


def test_extreme_components_map_to_endpoints():
    v = np.zeros((1, 2, 2, 3))
    v[0, 0, 0] = (3.0, -5.0, 1.0)  # (max, min, max) of each plane
    v[0, 1, 1] = (-3.0, 5.0, -1.0)
    c = colorize_flow(field(v))
    assert tuple(c[0, 0, 0]) == (1.0, 0.0, 1.0)


def test_uniform_translation_gives_constant_frames():
    v = np.broadcast_to(np.array([0.1, -0.2, 0.05]), (4, 5, 6, 3)).copy()
    c = colorize_flow(field(v))
    assert np.all(c == c[0, 0, 0])


def test_all_zero_field_is_half():
    c = colorize_flow(field(np.zeros((2, 4, 4, 3))))
    assert np.all(c == 0.5)


def test_colorize_rejects_non_finite():
    v = np.zeros((1, 2, 2, 3))
    v[0, 0, 0, 0] = np.nan
    with pytest.raises(InvalidArgumentError):
        colorize_flow(v)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_colorize_monotone_and_bounded(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((3, 4, 5, 3)) * rng.uniform(0.01, 10, size=3)
    c = colorize_flow(v)
    assert c.min() >= 0.0 and c.max() <= 1.0
    for p in range(3):
        order = np.argsort(v[..., p], axis=None, kind="stable")
        assert np.all(np.diff(c[..., p].reshape(-1)[order]) >= 0)


def test_preview_export_rounds(tmp_path):
    frames = np.zeros((1, 1, 2, 3))
    frames[0, 0, 1] = (1.0, 0.5, 0.0)
    paths = export_preview(frames, tmp_path)
    img = read_pnm(paths[0])
    assert img[0, 1].tolist() == [255, 128, 0]


# -- temporal handling ----------------------------------------------------------


def test_downsample_by_three():
    f = np.arange(9)[:, None]
    assert temporal_downsample(f, 3)[:, 0].tolist() == [0, 3, 6]


def test_downsample_identity():
    f = np.arange(7)[:, None]
    assert np.array_equal(temporal_downsample(f, 1), f)


def test_downsample_forty_frames():
    f = np.arange(40)[:, None]
    assert len(temporal_downsample(f, 3)) == -(-40 // 3) == 14


def test_downsample_moves_joints_identically():
    f = np.arange(10)[:, None]
    j = np.arange(20).reshape(10, 1, 2)
    out, jo = temporal_downsample(f, 2, j)
    assert np.array_equal(jo, j[::2]) and np.array_equal(out, f[::2])


def test_downsample_rejects_zero():
    with pytest.raises(InvalidArgumentError):
        temporal_downsample(np.zeros((3, 1)), 0)


@pytest.mark.parametrize(
    "frames, expected",
    [(32, [(0, 16), (8, 16), (16, 16)]), (16, [(0, 16)]), (20, [(0, 16), (8, 12)]), (11, [(0, 11)])],
)
def test_clip_starts_examples(frames, expected):
    assert clip_starts(frames, 16, 8) == expected


def test_short_tail_is_dropped():
    # 26 frames: clips at 0 and 8 cover 24; the next would hold 10 real frames (>= 8)
    assert clip_starts(26, 16, 8) == [(0, 16), (8, 16), (16, 10)]
    # 29 frames with stride 12: tail at 24 holds 5 real frames (< 8), dropped
    assert clip_starts(29, 16, 4) == [(0, 16), (12, 16)]


def test_too_short_sequence():
    with pytest.raises(EmptySequenceError):
        clip_starts(7, 16, 8)


def test_invalid_overlap():
    with pytest.raises(InvalidArgumentError):
        clip_starts(30, 8, 8)


def test_padded_clip_contents():
    frames = np.arange(20, dtype=np.float64)[:, None, None, None] * np.ones((1, 2, 2, 3))
    joints = np.ones((20, 1, 2), dtype=np.int64)
    clips = split_clips(frames, joints, clip_len=16, overlap=8)
    last = clips[-1]
    assert last.start == 8 and last.real_frames == 12
    assert np.array_equal(last.tensor[0, :12, 0, 0], np.arange(8, 20))
    assert not last.tensor[:, 12:].any()
    assert last.valid[:12].all() and not last.valid[12:].any()
    assert last.tensor.shape == (3, 16, 2, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.integers(2, 32), st.data())
def test_clips_cover_retained_frames(t, clip_len, data):
    overlap = data.draw(st.integers(0, clip_len - 1))
    if 2 * t < clip_len:
        with pytest.raises(EmptySequenceError):
            clip_starts(t, clip_len, overlap)
        return
    starts = clip_starts(t, clip_len, overlap)
    stride = clip_len - overlap
    assert [s for s, _ in starts] == [i * stride for i in range(len(starts))]
    covered = set()
    for s, real in starts:
        assert real * 2 >= clip_len and s + real <= t
        covered.update(range(s, s + real))
    # when the remainder rule fires the tail is fully covered
    if starts[-1][1] < clip_len:
        assert covered == set(range(t))
    else:
        assert t - max(covered) - 1 < clip_len


# -- cropping -------------------------------------------------------------------


def test_center_crop_identity_resize_shifts_joints():
    frames = np.zeros((1, 10, 12, 3))
    joints = np.array([[[5, 4]]])
    out, j, valid = crop_resize(frames, joints, (6, 8), (6, 8))
    # center box: top 2, left 2
    assert tuple(j[0, 0]) == (3, 2) and valid.all() and out.shape == (1, 6, 8, 3)


def test_downscale_by_two_halves_joints():
    frames = np.zeros((1, 16, 16, 3))
    joints = np.array([[[7, 9]]])
    _, j, _ = crop_resize(frames, joints, (16, 16), (8, 8))
    assert tuple(j[0, 0]) == (3, 4)


def test_joint_outside_crop_is_clamped_and_flagged():
    frames = np.zeros((1, 10, 10, 3))
    joints = np.array([[[0, 0], [5, 5]]])
    _, j, valid = crop_resize(frames, joints, (4, 4), (4, 4))
    assert tuple(j[0, 0]) == (0, 0) and valid.tolist() == [[False, True]]


def test_training_crop_needs_rng_and_is_seeded():
    frames = np.random.default_rng(0).random((2, 12, 12, 3))
    joints = np.full((2, 1, 2), 6)
    with pytest.raises(InvalidArgumentError):
        crop_resize(frames, joints, (8, 8), (8, 8), training=True)
    a = crop_resize(frames, joints, (8, 8), (8, 8), training=True, rng=np.random.default_rng(3))
    b = crop_resize(frames, joints, (8, 8), (8, 8), training=True, rng=np.random.default_rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_markers_land_near_mapped_joints(seed):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(16, 40)), int(rng.integers(16, 40))
    ch, cw = int(rng.integers(8, h + 1)), int(rng.integers(8, w + 1))
    # at most 2x downscaling, so bilinear taps reach every source pixel
    th, tw = int(rng.integers(-(-ch // 2), ch + 1)), int(rng.integers(-(-cw // 2), cw + 1))
    frames = np.zeros((1, h, w, 3))
    x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
    frames[0, y, x] = 1.0
    joints = np.array([[[x, y]]])
    out, j, valid = crop_resize(frames, joints, (ch, cw), (th, tw), training=True, rng=rng)
    if not valid[0, 0]:
        return
    peak = np.unravel_index(np.argmax(out[0, ..., 0]), (th, tw))
    assert out[0, ..., 0].max() > 0
    assert abs(peak[0] - j[0, 0, 1]) <= 1 and abs(peak[1] - j[0, 0, 0]) <= 1


# -- file format ----------------------------------------------------------------


def test_flow_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    v = rng.standard_normal((3, 4, 5, 3)).astype(np.float32).astype(np.float64)
    j = rng.integers(0, 4, (3, 2, 2)).astype(np.float64)
    f = FlowField(v, j, 2, 1)
    write_flow_file(tmp_path / "a.flw", f)
    raw = (tmp_path / "a.flw").read_bytes()
    assert raw[:4] == b"FLW1" and len(raw) == 24 + 4 * (v.size + j.size)
    g = read_flow_file(tmp_path / "a.flw")
    assert np.array_equal(g.vectors, v) and np.array_equal(g.joints2d, j)


def test_flow_field_rejects_joints_outside_frame():
    with pytest.raises(InvalidArgumentError):
        FlowField(np.zeros((1, 4, 4, 3)), np.array([[[4.0, 0.0]]]), 1)

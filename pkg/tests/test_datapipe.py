import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dancegen.datapipe import (
    DEFAULT_LAYOUT,
    MID_HIP,
    NECK,
    Clip,
    DataError,
    MusicFeatureSequence,
    PoseNormalizer,
    PoseSequence,
    assemble_features,
    interpolate_missing,
    layout_width,
    load_dataset,
    planted_beats,
    read_clip,
    save_dataset,
    style_period,
    synth_corpus,
    write_clip,
)


def one_joint(values):
    """A 2-joint pose sequence where joint 0 carries ``values`` in x (None = missing) and joint 1 is fixed."""
    frames = np.zeros((len(values), 4))
    for t, v in enumerate(values):
        if v is not None:
            frames[t, 0:2] = [v, v + 10.0]
        frames[t, 2:4] = [7.0, 8.0]
    return PoseSequence(frames)


def test_interpolate_midpoint():
    out = interpolate_missing(one_joint([1.0, None, 3.0]))
    assert out.frames[1, 0] == 2.0
    assert out.frames[1, 1] == 12.0


def test_interpolate_leading_gap_copies_nearest():
    out = interpolate_missing(one_joint([None, None, 5.0]))
    np.testing.assert_array_equal(out.frames[:, 0], [5.0, 5.0, 5.0])


def test_interpolate_trailing_gap_copies_nearest():
    out = interpolate_missing(one_joint([4.0, None, None]))
    np.testing.assert_array_equal(out.frames[:, 0], [4.0, 4.0, 4.0])


def test_interpolate_joint_missing_everywhere():
    with pytest.raises(DataError, match="joint 0"):
        interpolate_missing(one_joint([None, None, None]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_interpolation_recovers_linear_trajectory(seed):
    rng = np.random.default_rng(seed)
    n, joints = 30, 4
    t = np.arange(n)[:, None, None]
    slope = rng.uniform(-5, 5, size=(1, joints, 2))
    start = rng.uniform(10, 100, size=(1, joints, 2))
    truth = start + slope * t
    mask = rng.random((n, joints)) < 0.4
    for j in range(joints):
        # keep two interior anchors so every gap is bracketed or copies an exact end value
        mask[0, j] = mask[-1, j] = False
    frames = truth.copy()
    frames[mask] = 0.0
    out = interpolate_missing(frames.reshape(n, -1)).frames.reshape(n, joints, 2)
    np.testing.assert_allclose(out, truth, rtol=0, atol=1e-12)
    # present values untouched bit for bit
    assert np.array_equal(out[~mask], truth[~mask])
    assert not interpolate_missing(frames.reshape(n, -1)).missing_mask().any()


def test_default_layout_width():
    assert layout_width(DEFAULT_LAYOUT) == 438
    assert [w for _, w in DEFAULT_LAYOUT] == [20, 20, 12, 384, 1, 1]


def test_assemble_two_groups_in_order():
    a = np.arange(6.0).reshape(3, 2)
    b = 100 + np.arange(9.0).reshape(3, 3)
    seq = assemble_features({"a": a, "b": b}, layout=[("a", 2), ("b", 3)])
    assert seq.frames.shape == (3, 5)
    np.testing.assert_array_equal(seq.frames[:, :2], a)
    np.testing.assert_array_equal(seq.channel("b"), b)


def test_assemble_frame_mismatch_names_group():
    with pytest.raises(DataError, match="'b'"):
        assemble_features({"a": np.zeros((3, 2)), "b": np.zeros((4, 3))}, layout=[("a", 2), ("b", 3)])


def test_assemble_width_mismatch():
    with pytest.raises(DataError):
        assemble_features({"a": np.zeros((3, 2))}, layout=[("a", 3)])


def test_normalizer_round_trip_and_units():
    ds = synth_corpus(n_styles=3, clips_per_style=2, n=40, seed=1)
    poses = [c.pose.frames for c in ds.clips]
    norm = PoseNormalizer.fit(poses)
    z = norm.apply(poses[0])
    np.testing.assert_allclose(norm.invert(z), poses[0], rtol=0, atol=1e-9)
    all_norm = np.concatenate([norm.apply(p) for p in poses]).reshape(-1, 25, 2)
    np.testing.assert_allclose(all_norm[:, MID_HIP].mean(axis=0), 0.0, atol=1e-9)
    torso = np.linalg.norm(all_norm[:, NECK] - all_norm[:, MID_HIP], axis=1).mean()
    assert torso == pytest.approx(1.0, abs=1e-9)


def test_synth_pairs_and_split():
    ds = synth_corpus(n_styles=3, clips_per_style=20, n=60, seed=0)
    assert len(ds) == 60
    assert len(ds.split("test")) == 6 and len(ds.split("train")) == 54
    for c in ds.clips:
        assert len(c.music) == len(c.pose) == 60
        assert c.music.frames.shape[1] == 438 and c.pose.frames.shape[1] == 50
    assert ds.styles == [0, 1, 2]


def test_synth_same_seed_same_corpus():
    a = synth_corpus(n_styles=2, clips_per_style=2, n=40, seed=4)
    b = synth_corpus(n_styles=2, clips_per_style=2, n=40, seed=4)
    c = synth_corpus(n_styles=2, clips_per_style=2, n=40, seed=5)
    for x, y in zip(a.clips, b.clips):
        assert np.array_equal(x.music.frames, y.music.frames) and np.array_equal(x.pose.frames, y.pose.frames)
    assert not np.array_equal(a.clips[0].pose.frames, c.clips[0].pose.frames)


def test_synth_beat_grid_matches_style_period():
    ds = synth_corpus(n_styles=3, clips_per_style=1, n=90, seed=2)
    for c in ds.clips:
        beats = planted_beats(c)
        assert set(np.diff(beats)) == {style_period(c.style)}
        onset = c.music.channel("onset")[:, 0]
        assert np.all(onset[beats] > 0.99)


def test_synth_rejects_too_short():
    with pytest.raises(DataError):
        synth_corpus(n=10)


def test_clip_rejects_length_mismatch():
    with pytest.raises(DataError):
        Clip(MusicFeatureSequence(np.zeros((5, 2)), (("a", 2),)), PoseSequence(np.ones((6, 4))), 0)


def test_clip_file_round_trip(tmp_path):
    frames = np.random.default_rng(0).normal(size=(7, 3)) * 1e3
    frames[0, 0] = 1.0 / 3.0
    write_clip(tmp_path / "c.txt", frames, 15.0, comments=["seed=4"])
    text = (tmp_path / "c.txt").read_text().splitlines()
    assert text[0] == "#frames=7 width=3 fps=15"
    back, fps, comments = read_clip(tmp_path / "c.txt")
    assert np.array_equal(back, frames)
    assert fps == 15.0 and comments == ["seed=4"]


def test_malformed_header_reports_line(tmp_path):
    (tmp_path / "bad.txt").write_text("frames=2 width=1\n1\n2\n")
    with pytest.raises(DataError, match=":1:"):
        read_clip(tmp_path / "bad.txt")


def test_bad_row_reports_line(tmp_path):
    (tmp_path / "bad.txt").write_text("#frames=2 width=2 fps=15\n1 2\n3\n")
    with pytest.raises(DataError, match=":3:"):
        read_clip(tmp_path / "bad.txt")


def test_dataset_round_trip_bit_exact(tmp_path):
    ds = synth_corpus(n_styles=2, clips_per_style=2, n=30, seed=8, test_fraction=0.25)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.layout == ds.layout and back.fps == ds.fps
    for a, b in zip(ds.clips, back.clips):
        assert np.array_equal(a.music.frames, b.music.frames)
        assert np.array_equal(a.pose.frames, b.pose.frames)
        assert (a.style, a.split, a.name) == (b.style, b.split, b.name)
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert {"music_file", "pose_file", "style", "split"} <= set(manifest["clips"][0])


def test_dataset_missing_clip_file(tmp_path):
    ds = synth_corpus(n_styles=1, clips_per_style=2, n=30, seed=8)
    save_dataset(ds, tmp_path)
    next((tmp_path / "clips").glob("*.pose.txt")).unlink()
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path)


def test_dataset_width_mismatch(tmp_path):
    ds = synth_corpus(n_styles=1, clips_per_style=1, n=30, seed=8)
    save_dataset(ds, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["layout"][0][1] = 21
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DataError, match="width"):
        load_dataset(tmp_path)


def test_dataset_rejects_unaligned_pair(tmp_path):
    ds = synth_corpus(n_styles=1, clips_per_style=1, n=30, seed=8)
    save_dataset(ds, tmp_path)
    pfile = next((tmp_path / "clips").glob("*.pose.txt"))
    frames, fps, _ = read_clip(pfile)
    write_clip(pfile, frames[:-1], fps)
    with pytest.raises(DataError):
        load_dataset(tmp_path)

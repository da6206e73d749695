"""Music/pose sequences, pose cleaning, synthetic corpora and on-disk formats."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NUM_JOINTS = 25
POSE_DIM = 2 * NUM_JOINTS
NECK, MID_HIP = 1, 8  # BODY_25 indices

DEFAULT_LAYOUT: tuple[tuple[str, int], ...] = (
    ("mfcc", 20),
    ("mfcc_delta", 20),
    ("chroma", 12),
    ("tempogram", 384),
    ("onset", 1),
    ("beat_onehot", 1),
)
DEFAULT_FPS = 15.0


class DataError(ValueError):
    pass


def layout_width(layout: Sequence[tuple[str, int]]) -> int:
    return sum(int(w) for _, w in layout)


@dataclass
class MusicFeatureSequence:
    frames: np.ndarray
    layout: tuple[tuple[str, int], ...] = DEFAULT_LAYOUT
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.layout = tuple((str(n), int(w)) for n, w in self.layout)
        if self.frames.ndim != 2 or self.frames.shape[1] != layout_width(self.layout):
            raise DataError(
                f"music frames have shape {self.frames.shape}, layout expects width {layout_width(self.layout)}"
            )

    def __len__(self) -> int:
        return self.frames.shape[0]

    def channel(self, name: str) -> np.ndarray:
        start = 0
        for group, width in self.layout:
            if group == name:
                return self.frames[:, start : start + width]
            start += width
        raise KeyError(name)


@dataclass
class PoseSequence:
    """2D keyjoints per frame; a joint with both coordinates exactly 0 is missing."""

    frames: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] % 2:
            raise DataError(f"pose frames must be (n, 2*joints), got {self.frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def joints(self) -> np.ndarray:
        return self.frames.reshape(len(self), -1, 2)

    def missing_mask(self) -> np.ndarray:
        """(n, joints) boolean, True where a joint is missing."""
        j = self.joints()
        return (j[..., 0] == 0.0) & (j[..., 1] == 0.0)


@dataclass
class Clip:
    music: MusicFeatureSequence
    pose: PoseSequence
    style: int
    split: str = "train"
    name: str = ""

    def __post_init__(self) -> None:
        if len(self.music) != len(self.pose):
            raise DataError(f"clip {self.name!r}: {len(self.music)} music frames vs {len(self.pose)} pose frames")


@dataclass
class DanceDataset:
    clips: list[Clip] = field(default_factory=list)
    layout: tuple[tuple[str, int], ...] = DEFAULT_LAYOUT
    fps: float = DEFAULT_FPS

    def __len__(self) -> int:
        return len(self.clips)

    def split(self, tag: str) -> list[Clip]:
        return [c for c in self.clips if c.split == tag]

    @property
    def styles(self) -> list[int]:
        return sorted({c.style for c in self.clips})


# ---------------------------------------------------------------------------
# cleaning and assembly


def interpolate_missing(poses: PoseSequence | np.ndarray) -> PoseSequence:
    """Fill missing joints per joint by linear interpolation in time.

    Gaps at the start or end copy the nearest present value. Present joints
    are returned unchanged.
    """
    seq = poses if isinstance(poses, PoseSequence) else PoseSequence(poses)
    out = seq.frames.copy().reshape(len(seq), -1, 2)
    missing = seq.missing_mask()
    t = np.arange(len(seq), dtype=np.float64)
    for j in range(out.shape[1]):
        gone = missing[:, j]
        if not gone.any():
            continue
        if gone.all():
            raise DataError(f"joint {j} is missing in every frame")
        have = ~gone
        for d in range(2):
            # np.interp holds the end values constant outside the sample range
            out[gone, j, d] = np.interp(t[gone], t[have], out[have, j, d])
    return PoseSequence(out.reshape(len(seq), -1), seq.fps)


def assemble_features(
    groups: dict[str, np.ndarray] | Sequence[tuple[str, np.ndarray]],
    fps: float = DEFAULT_FPS,
    layout: Sequence[tuple[str, int]] | None = None,
) -> MusicFeatureSequence:
    """Concatenate named per-frame feature groups in layout order."""
    items = dict(groups.items() if isinstance(groups, dict) else groups)
    if layout is None:
        layout = DEFAULT_LAYOUT if set(items) == {n for n, _ in DEFAULT_LAYOUT} else [
            (name, np.atleast_2d(np.asarray(m).T).T.shape[1]) for name, m in items.items()
        ]
    cols = []
    n_frames = None
    for name, width in layout:
        if name not in items:
            raise DataError(f"feature group {name!r} is missing")
        m = np.asarray(items[name], dtype=np.float64)
        if m.ndim == 1:
            m = m[:, None]
        if m.shape[1] != width:
            raise DataError(f"feature group {name!r} has width {m.shape[1]}, layout expects {width}")
        if n_frames is None:
            n_frames = m.shape[0]
        elif m.shape[0] != n_frames:
            raise DataError(f"feature group {name!r} has {m.shape[0]} frames, expected {n_frames}")
        cols.append(m)
    extra = set(items) - {n for n, _ in layout}
    if extra:
        raise DataError(f"feature groups not in layout: {sorted(extra)}")
    return MusicFeatureSequence(np.concatenate(cols, axis=1), tuple(layout), fps)


# ---------------------------------------------------------------------------
# pose normalization


@dataclass
class PoseNormalizer:
    """Dataset-level affine normalization: subtract a mean hip position, divide by mean torso length."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale: float = 1.0

    @classmethod
    def fit(cls, poses: Iterable[np.ndarray]) -> "PoseNormalizer":
        hips, torsos = [], []
        for p in poses:
            j = np.asarray(p).reshape(len(p), -1, 2)
            hips.append(j[:, MID_HIP])
            torsos.append(np.linalg.norm(j[:, NECK] - j[:, MID_HIP], axis=1))
        center = np.concatenate(hips).mean(axis=0)
        scale = float(np.concatenate(torsos).mean())
        if not scale > 0:
            raise DataError("degenerate torso length; cannot normalize poses")
        return cls(center, scale)

    def apply(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        tile = np.tile(self.center, frames.shape[-1] // 2)
        return (frames - tile) / self.scale

    def invert(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        tile = np.tile(self.center, frames.shape[-1] // 2)
        return frames * self.scale + tile


# ---------------------------------------------------------------------------
# synthetic corpus

# A standing figure in BODY_25 order, torso length 1, hip at the origin, y down.
_BASE_POSE = np.array(
    [
        (0.0, -1.35), (0.0, -1.0), (-0.3, -1.0), (-0.45, -0.6), (-0.5, -0.2),
        (0.3, -1.0), (0.45, -0.6), (0.5, -0.2), (0.0, 0.0), (-0.15, 0.0),
        (-0.17, 0.55), (-0.18, 1.05), (0.15, 0.0), (0.17, 0.55), (0.18, 1.05),
        (-0.05, -1.4), (0.05, -1.4), (-0.12, -1.37), (0.12, -1.37), (0.2, 1.12),
        (0.25, 1.1), (0.16, 1.1), (-0.2, 1.12), (-0.25, 1.1), (-0.16, 1.1),
    ]
)

# Per style: beat period in frames, and (joint, dx, dy) oscillation amplitudes in torso units.
_STYLES: dict[int, dict] = {
    0: {
        "period": 8,
        "motion": [(3, 0.0, -0.25), (4, 0.0, -0.5), (6, 0.0, -0.25), (7, 0.0, -0.5), (0, 0.0, -0.05)],
        "band": 6.0,
    },
    1: {
        "period": 6,
        "motion": [(4, 0.35, 0.0), (7, -0.35, 0.0), (10, 0.12, -0.1), (13, -0.12, -0.1), (8, 0.0, 0.08)],
        "band": 3.0,
    },
    2: {
        "period": 10,
        "motion": [(0, 0.2, 0.0), (1, 0.12, 0.0), (4, 0.3, 0.3), (7, 0.3, -0.3), (11, -0.15, 0.0)],
        "band": 1.5,
    },
}
# Joints carried along with a moving joint (child follows parent at this fraction).
_FOLLOW = {0: [(15, 1.0), (16, 1.0), (17, 1.0), (18, 1.0)], 11: [(22, 1.0), (23, 1.0), (24, 1.0)],
           14: [(19, 1.0), (20, 1.0), (21, 1.0)], 10: [(11, 0.5)], 13: [(14, 0.5)], 8: [(9, 1.0), (12, 1.0)]}

STYLE_NAMES = ("ballet", "hiphop", "jpop")


def style_period(style: int) -> int:
    return int(_STYLES[style]["period"])


def _smooth_noise(rng: np.random.Generator, n: int, width: int, bandwidth: float) -> np.ndarray:
    """White noise low-passed along time with a Gaussian kernel of the given width."""
    raw = rng.standard_normal((n, width))
    radius = max(1, int(math.ceil(3 * bandwidth)))
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / bandwidth) ** 2)
    k /= np.sqrt((k * k).sum())
    padded = np.pad(raw, ((radius, radius), (0, 0)), mode="reflect")
    out = np.empty_like(raw)
    for c in range(width):
        out[:, c] = np.convolve(padded[:, c], k, mode="valid")
    return out


def synth_music(
    style: int,
    n: int,
    rng: np.random.Generator,
    layout: Sequence[tuple[str, int]] = DEFAULT_LAYOUT,
    fps: float = DEFAULT_FPS,
    phase: int | None = None,
) -> tuple[MusicFeatureSequence, np.ndarray]:
    """Feature sequence with a planted beat grid; returns ``(features, beat_frames)``."""
    traits = _STYLES[style]
    period = traits["period"]
    phase = int(rng.integers(period)) if phase is None else phase
    beats = np.arange(phase, n, period)
    t = np.arange(n)
    onset = np.zeros(n)
    for b in beats:
        onset += np.exp(-0.5 * ((t - b) / 1.0) ** 2)
    onehot = np.zeros(n)
    onehot[beats] = 1.0
    groups: dict[str, np.ndarray] = {}
    style_rng = np.random.default_rng(1000 + style)
    has_mfcc = dict(layout).get("mfcc") == dict(layout).get("mfcc_delta")
    for name, width in layout:
        if name == "onset":
            groups[name] = onset[:, None]
        elif name == "beat_onehot":
            groups[name] = onehot[:, None]
        elif name == "tempogram":
            lags = np.arange(width)
            profile = np.exp(-lags / (12.0 * period)) * (0.5 + 0.5 * np.cos(2 * np.pi * lags / period))
            groups[name] = profile[None, :] + 0.05 * _smooth_noise(rng, n, width, traits["band"])
        elif name == "mfcc_delta" and has_mfcc:
            continue
        else:
            offset = style_rng.normal(0.0, 0.5, size=width)
            groups[name] = offset[None, :] + 0.3 * _smooth_noise(rng, n, width, traits["band"])
    if has_mfcc and "mfcc_delta" in dict(layout):
        groups["mfcc_delta"] = np.vstack([np.zeros((1, groups["mfcc"].shape[1])), np.diff(groups["mfcc"], axis=0)])
    return assemble_features(groups, fps, layout), beats


def synth_pose(
    style: int,
    n: int,
    beats: np.ndarray,
    rng: np.random.Generator,
    noise: float = 0.01,
    fps: float = DEFAULT_FPS,
) -> PoseSequence:
    """Oscillating figure whose moving joints reverse direction exactly on ``beats``.

    Output is in pixel-like units (torso ~150, hip near (640, 400)).
    """
    traits = _STYLES[style]
    period = traits["period"]
    phase = int(beats[0]) if len(beats) else 0
    t = np.arange(n)
    # cos has zero slope at every multiple of pi, i.e. at every beat frame
    wave = np.cos(np.pi * (t - phase) / period)
    disp = np.zeros((n, NUM_JOINTS, 2))
    for joint, dx, dy in traits["motion"]:
        amp = rng.uniform(0.8, 1.2)
        move = amp * wave[:, None] * np.array([dx, dy])[None, :]
        disp[:, joint] += move
        for child, frac in _FOLLOW.get(joint, []):
            disp[:, child] += frac * move
    torso = 150.0 * rng.uniform(0.9, 1.1)
    hip = np.array([640.0, 400.0]) + rng.uniform(-40.0, 40.0, size=2)
    base = _BASE_POSE + rng.normal(0.0, 0.02, size=_BASE_POSE.shape)
    joints = (base[None] + disp) * torso + hip
    if noise > 0:
        joints = joints + rng.normal(0.0, noise * torso / 150.0, size=joints.shape)
    return PoseSequence(joints.reshape(n, POSE_DIM), fps)


def synth_corpus(
    n_styles: int = 3,
    clips_per_style: int = 20,
    n: int = 900,
    fps: float = DEFAULT_FPS,
    seed: int = 0,
    layout: Sequence[tuple[str, int]] = DEFAULT_LAYOUT,
    noise: float = 0.01,
    test_fraction: float = 0.1,
) -> DanceDataset:
    """Seeded corpus of aligned (music, pose, style) clips with planted beats.

    Clips get independent child seeds, so a clip does not change when the
    corpus grows. ``test_fraction`` of the clips, chosen at random, form the
    test split.
    """
    if not 1 <= n_styles <= len(_STYLES):
        raise DataError(f"n_styles must be in 1..{len(_STYLES)}")
    if clips_per_style < 1:
        raise DataError("clips_per_style must be >= 1")
    longest = max(style_period(s) for s in range(n_styles))
    if n < 2 * longest:
        raise DataError(f"n={n} is shorter than two beat periods ({2 * longest})")
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_styles * clips_per_style + 1)
    clips = []
    for s in range(n_styles):
        for c in range(clips_per_style):
            rng = np.random.default_rng(children[s * clips_per_style + c])
            music, beats = synth_music(s, n, rng, layout, fps)
            pose = synth_pose(s, n, beats, rng, noise, fps)
            clips.append(Clip(music, pose, s, "train", f"{STYLE_NAMES[s]}_{c:04d}"))
    n_test = int(round(test_fraction * len(clips)))
    order = np.random.default_rng(children[-1]).permutation(len(clips))
    for i in order[:n_test]:
        clips[i].split = "test"
    return DanceDataset(clips, tuple(layout), fps)


def planted_beats(clip: Clip) -> np.ndarray:
    return np.flatnonzero(clip.music.channel("beat_onehot")[:, 0] == 1.0)


# ---------------------------------------------------------------------------
# files


def write_clip(path: str | os.PathLike, frames: np.ndarray, fps: float, comments: Sequence[str] = ()) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    n, d = frames.shape
    lines = [f"#frames={n} width={d} fps={fps:.17g}"]
    lines += [f"# {c}" for c in comments]
    for row in frames:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_clip(path: str | os.PathLike) -> tuple[np.ndarray, float, list[str]]:
    """Parse a clip file; returns ``(frames, fps, comment_lines)``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"clip file not found: {path}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}:1: empty clip file")
    header = lines[0]
    try:
        if not header.startswith("#"):
            raise ValueError
        fields = dict(tok.split("=", 1) for tok in header[1:].split())
        n, d, fps = int(fields["frames"]), int(fields["width"]), float(fields["fps"])
    except (ValueError, KeyError):
        raise DataError(f"{path}:1: malformed header {header!r}") from None
    comments = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != d:
            raise DataError(f"{path}:{lineno}: expected {d} values, found {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
    if len(rows) != n:
        raise DataError(f"{path}: header declares {n} frames, found {len(rows)}")
    frames = np.array(rows, dtype=np.float64).reshape(n, d)
    return frames, fps, comments


def save_dataset(ds: DanceDataset, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, clip in enumerate(ds.clips):
        stem = clip.name or f"clip_{i:05d}"
        mfile = f"clips/{stem}.music.txt"
        pfile = f"clips/{stem}.pose.txt"
        write_clip(out / mfile, clip.music.frames, clip.music.fps)
        write_clip(out / pfile, clip.pose.frames, clip.pose.fps)
        entries.append({"name": stem, "music_file": mfile, "pose_file": pfile, "style": int(clip.style), "split": clip.split})
    manifest = {"fps": ds.fps, "layout": [[n, w] for n, w in ds.layout], "clips": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out


def load_dataset(data_dir: str | os.PathLike) -> DanceDataset:
    root = Path(data_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"no manifest.json in {root}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{root / 'manifest.json'}:{exc.lineno}: {exc.msg}") from exc
    try:
        layout = tuple((str(n), int(w)) for n, w in manifest["layout"])
        fps = float(manifest["fps"])
        entries = manifest["clips"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed dataset manifest in {root}: {exc!r}") from exc
    width = layout_width(layout)
    clips = []
    for e in entries:
        mpath, ppath = root / e["music_file"], root / e["pose_file"]
        if not mpath.exists() or not ppath.exists():
            missing = mpath if not mpath.exists() else ppath
            raise DataError(f"manifest references missing clip file {missing}")
        mframes, mfps, _ = read_clip(mpath)
        if mframes.shape[1] != width:
            raise DataError(f"{mpath}: width {mframes.shape[1]} does not match manifest layout width {width}")
        pframes, pfps, _ = read_clip(ppath)
        clips.append(
            Clip(
                MusicFeatureSequence(mframes, layout, mfps),
                PoseSequence(pframes, pfps),
                int(e["style"]),
                str(e.get("split", "train")),
                str(e.get("name", "")),
            )
        )
    return DanceDataset(clips, layout, fps)

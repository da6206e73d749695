"""Evaluation metrics: beats, style classifier features, FID, diversity, multimodality."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

from .numcore import AdamState, Tensor, adam_step, backward, ops


class MetricsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# beats


def motion_curves(poses: np.ndarray, window: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame motion magnitude and its windowed standard deviation.

    The SD is taken about zero displacement (the root mean square of the
    magnitudes in a centered window, truncated at the ends), so it dips
    wherever the figure momentarily stops, i.e. where movement reverses.
    """
    y = np.asarray(poses, dtype=np.float64)
    n = y.shape[0]
    if n < window or window < 3:
        raise MetricsError(f"need at least window={window} >= 3 frames, got {n}")
    m = np.empty(n)
    m[1:] = np.linalg.norm(np.diff(y, axis=0), axis=1)
    m[0] = m[1]
    half = window // 2
    sq = np.concatenate([[0.0], np.cumsum(m * m)])
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    s = np.sqrt(np.maximum((sq[hi] - sq[lo]) / (hi - lo), 0.0))
    return m, s


def kinematic_beats(poses: np.ndarray, window: int = 5, prominence: float | None = None) -> np.ndarray:
    """Frames where the motion SD curve has a local minimum of sufficient prominence.

    ``prominence`` defaults to a tenth of the SD curve's range.
    """
    _, s = motion_curves(poses, window)
    spread = float(s.max() - s.min())
    if spread <= 1e-12 * max(1.0, float(s.max())):
        return np.zeros(0, dtype=np.int64)
    delta = 0.1 * spread if prominence is None else prominence
    idx, _ = find_peaks(-s, prominence=delta)
    return idx.astype(np.int64)


def musical_beats(channel: np.ndarray, mode: str = "onehot", threshold: float = 0.5) -> np.ndarray:
    """Beat frames from a one-hot beat channel or an onset-strength envelope."""
    x = np.asarray(channel, dtype=np.float64).reshape(-1)
    if x.size < 1:
        raise MetricsError("empty channel")
    if mode == "onehot":
        return np.flatnonzero(x >= 0.5).astype(np.int64)
    if mode != "onset":
        raise MetricsError(f"unknown mode {mode!r}")
    if x.size == 1:
        return np.zeros(0, dtype=np.int64)
    left = np.empty(x.size, dtype=bool)
    right = np.empty(x.size, dtype=bool)
    left[0] = True
    left[1:] = x[1:] > x[:-1]
    right[-1] = True
    right[:-1] = x[:-1] >= x[1:]
    right[0] = x[0] > x[1]
    return np.flatnonzero(left & right & (x > threshold)).astype(np.int64)


def match_beats(a: Sequence[float], b: Sequence[float], dt: float) -> int:
    """Greedy one-to-one matching in time order; returns how many of ``a`` found a partner in ``b``."""
    if dt < 0:
        raise MetricsError("dt must be >= 0")
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    j = 0
    hits = 0
    for t in a:
        while j < b.size and b[j] < t - dt:
            j += 1
        if j < b.size and abs(b[j] - t) <= dt:
            hits += 1
            j += 1
    return hits


def beat_coverage_hit(kin: Sequence[float], mus: Sequence[float], dt: float) -> tuple[float, float]:
    """``(B_k / B_m, B_a / B_k)``; the hit rate is 0 when there are no kinematic beats."""
    b_m = len(mus)
    if b_m == 0:
        raise MetricsError("no musical beats; coverage is undefined")
    b_k = len(kin)
    if b_k == 0:
        return 0.0, 0.0
    return b_k / b_m, match_beats(kin, mus, dt) / b_k


def beat_alignment_ratio(a: Sequence[float], b: Sequence[float], dt: float) -> float:
    """Fraction of beats in ``a`` with a (distinct) beat of ``b`` within ``dt``."""
    if len(a) == 0:
        raise MetricsError("reference beat list is empty")
    return match_beats(a, b, dt) / len(a)


# ---------------------------------------------------------------------------
# style classifier


@dataclass
class ClassifierConfig:
    embed: int = 64
    hidden: int = 128
    n_styles: int = 3
    epochs: int = 300
    lr: float = 3e-3


@dataclass
class StyleClassifier:
    config: ClassifierConfig
    params: dict[str, np.ndarray]
    in_mean: np.ndarray
    in_std: np.ndarray

    def frame_inputs(self, poses: np.ndarray) -> np.ndarray:
        return (_frame_inputs(poses) - self.in_mean) / self.in_std


def _frame_inputs(poses: np.ndarray) -> np.ndarray:
    """Per-frame classifier input: pose and frame-to-frame velocity."""
    y = np.asarray(poses, dtype=np.float64)
    vel = np.vstack([np.zeros((1, y.shape[1])), np.diff(y, axis=0)])
    return np.concatenate([y, vel], axis=1)


def _forward(clf_params: dict[str, Tensor], inputs: np.ndarray, lengths: Sequence[int]) -> tuple[Tensor, Tensor]:
    total = inputs.shape[0]
    e = ops.relu(ops.add(ops.matmul(Tensor(inputs), clf_params["emb.w"]), ops.tile_rows(clf_params["emb.b"], total)))
    pooled = ops.segment_mean(e, lengths)
    s = len(lengths)
    hidden = ops.relu(ops.add(ops.matmul(pooled, clf_params["hid.w"]), ops.tile_rows(clf_params["hid.b"], s)))
    logits = ops.add(ops.matmul(hidden, clf_params["out.w"]), ops.tile_rows(clf_params["out.b"], s))
    return hidden, logits


def train_style_classifier(
    poses: Sequence[np.ndarray],
    labels: Sequence[int],
    config: ClassifierConfig | None = None,
    seed: int = 0,
) -> StyleClassifier:
    """Full-batch cross-entropy training with Adam on standardized per-frame inputs."""
    cfg = config or ClassifierConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise MetricsError("style classifier needs at least two styles")
    if labels.max() >= cfg.n_styles or labels.min() < 0:
        raise MetricsError(f"labels must lie in 0..{cfg.n_styles - 1}")
    raw = [_frame_inputs(p) for p in poses]
    stacked = np.concatenate(raw, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-8] = 1.0
    inputs = (stacked - mean) / std
    lengths = [r.shape[0] for r in raw]

    rng = np.random.default_rng(seed)
    d_in = inputs.shape[1]

    def glorot(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return rng.uniform(-lim, lim, size=(a, b))

    params = {
        "emb.w": glorot(d_in, cfg.embed),
        "emb.b": np.zeros(cfg.embed),
        "hid.w": glorot(cfg.embed, cfg.hidden),
        "hid.b": np.full(cfg.hidden, 0.01),
        "out.w": glorot(cfg.hidden, cfg.n_styles),
        "out.b": np.zeros(cfg.n_styles),
    }
    state = AdamState(lr=cfg.lr)
    for _ in range(cfg.epochs):
        leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        _, logits = _forward(leaves, inputs, lengths)
        backward(ops.cross_entropy(logits, labels))
        adam_step(params, {k: t.grad for k, t in leaves.items()}, state)
    return StyleClassifier(cfg, params, mean, std)


def _run(clf: StyleClassifier, poses: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.concatenate([clf.frame_inputs(p) for p in poses], axis=0)
    leaves = {k: Tensor(v) for k, v in clf.params.items()}
    hidden, logits = _forward(leaves, inputs, [len(p) for p in poses])
    return hidden.data, logits.data


def extract_features(clf: StyleClassifier, poses: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    """Hidden-layer activations; a single (n, d_y) sequence gives a vector, a list gives rows."""
    if isinstance(poses, np.ndarray) and poses.ndim == 2:
        return _run(clf, [poses])[0][0]
    return _run(clf, list(poses))[0]


def predict_styles(clf: StyleClassifier, poses: Sequence[np.ndarray]) -> np.ndarray:
    return _run(clf, list(poses))[1].argmax(axis=1)


def style_accuracy(clf: StyleClassifier, poses: Sequence[np.ndarray], labels: Sequence[int]) -> float:
    return float(np.mean(predict_styles(clf, poses) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# distribution metrics


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(features_a: np.ndarray, features_b: np.ndarray, eps: float = 1e-6, strict: bool = True) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ``strict`` requires more samples than dimensions in each set; without it
    two samples suffice and the ``eps`` ridge keeps covariances invertible.
    """
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise MetricsError(f"feature widths differ: {a.shape[1]} vs {b.shape[1]}")
    need = a.shape[1] + 1 if strict else 2
    if a.shape[0] < need or b.shape[0] < need:
        raise MetricsError(f"FID needs >= {need} samples per set, got {a.shape[0]} and {b.shape[0]}")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(d, d) + eps * np.eye(d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d) + eps * np.eye(d)
    root_a = _sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)


def diversity(features: np.ndarray, num_pairs: int = 500, seed: int = 0) -> float:
    """Mean Euclidean distance over distinct pairs sampled without replacement."""
    f = np.asarray(features, dtype=np.float64)
    n = f.shape[0]
    if n < 2:
        raise MetricsError("diversity needs at least two feature vectors")
    iu, ju = np.triu_indices(n, k=1)
    if num_pairs < iu.size:
        pick = np.random.default_rng(seed).choice(iu.size, size=num_pairs, replace=False)
        iu, ju = iu[pick], ju[pick]
    return float(np.linalg.norm(f[iu] - f[ju], axis=1).mean())


def multimodality(groups: Sequence[np.ndarray], seed: int = 0) -> float:
    """Mean within-group pairwise distance, averaged over groups (all pairs per group).

    ``seed`` is accepted for interface symmetry with :func:`diversity`; every
    within-group pair is used so no sampling takes place.
    """
    del seed
    if not groups:
        raise MetricsError("no groups")
    means = []
    for g in groups:
        g = np.asarray(g, dtype=np.float64)
        if g.shape[0] < 2:
            raise MetricsError("every multimodality group needs at least two members")
        iu, ju = np.triu_indices(g.shape[0], k=1)
        means.append(np.linalg.norm(g[iu] - g[ju], axis=1).mean())
    return float(np.mean(means))


def fid_over_time(
    generated: Sequence[np.ndarray],
    real: Sequence[np.ndarray],
    clf: StyleClassifier,
    window: int = 60,
    strict: bool = True,
    max_windows: int | None = None,
) -> list[tuple[int, float]]:
    """FID between the i-th ``window``-frame slices of the generated and real sets."""
    shortest = min(min(len(g) for g in generated), min(len(r) for r in real))
    if window > shortest:
        raise MetricsError(f"window of {window} frames is longer than the shortest sequence ({shortest})")
    count = shortest // window
    if max_windows is not None:
        count = min(count, max_windows)
    series = []
    for w in range(count):
        sl = slice(w * window, (w + 1) * window)
        fa = extract_features(clf, [g[sl] for g in generated])
        fb = extract_features(clf, [r[sl] for r in real])
        series.append((w, fid(fa, fb, strict=strict)))
    return series


def series_slope(series: Sequence[tuple[int, float]]) -> float:
    """Least-squares slope of a (window, value) series."""
    x = np.array([s[0] for s in series], dtype=np.float64)
    y = np.array([s[1] for s in series], dtype=np.float64)
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class MetricsReport:
    fid: float
    style_acc: float
    beat_coverage: float
    beat_hit_rate: float
    diversity: float
    multimodality: float | None
    fid_over_time: list[tuple[int, float]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["fid_over_time"] = [[int(i), float(v)] for i, v in self.fid_over_time]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key in ("fid", "style_acc", "beat_coverage", "beat_hit_rate", "diversity", "multimodality"):
            value = getattr(self, key)
            w.writerow([key, "" if value is None else repr(float(value))])
        return buf.getvalue()

    def fid_over_time_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["window", "fid"])
        for i, v in self.fid_over_time:
            w.writerow([int(i), repr(float(v))])
        return buf.getvalue()

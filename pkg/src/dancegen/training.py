"""Model container, l1 training loop with the auto-condition curriculum, checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .curriculum import CurriculumSchedule, build_feed_mask, p_of_epoch, scheduled_rollout
from .datapipe import Clip, PoseNormalizer
from .decoder import DecoderConfig, DecoderState, init_decoder_params, init_state, run_decoder
from .encoder import EncoderConfig, encode, init_encoder_params
from .numcore import (
    AdamState,
    Tensor,
    adam_step,
    backward,
    clip_global_norm,
    load_tensors,
    no_grad,
    ops,
    save_tensors,
)
from .numcore.checkpoint import CheckpointError

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "dancegen-model"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, step: int, value: float) -> None:
        self.epoch, self.step, self.value = epoch, step, value
        super().__init__(f"loss became {value} at epoch {epoch}, step {step}")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 8
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float = 5.0
    checkpoint_interval: int = 0
    detach: bool = False
    schedule: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("train.epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("train.lr must be positive")
        if self.batch < 1:
            raise ValueError("train.batch must be >= 1")
        if self.decoder.d_z != self.encoder.d_z:
            raise ValueError(f"decoder.d_z={self.decoder.d_z} must equal encoder.d_z={self.encoder.d_z}")


@dataclass
class EpochRecord:
    epoch: int
    p: int
    loss: float
    loss_per_elem: float
    seconds: float = 0.0


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, include_seconds: bool = True) -> str:
        head = "epoch,p,loss,loss_per_elem" + (",seconds" if include_seconds else "")
        rows = [head]
        for r in self.records:
            row = f"{r.epoch},{r.p},{r.loss!r},{r.loss_per_elem!r}"
            if include_seconds:
                row += f",{r.seconds:.6f}"
            rows.append(row)
        return "\n".join(rows) + "\n"

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]


@dataclass
class DanceModel:
    encoder: EncoderConfig
    decoder: DecoderConfig
    params: dict[str, np.ndarray]
    bop: np.ndarray
    normalizer: PoseNormalizer

    @classmethod
    def initialize(
        cls, enc: EncoderConfig, dec: DecoderConfig, seed: int, bop: np.ndarray | None = None,
        normalizer: PoseNormalizer | None = None,
    ) -> "DanceModel":
        rng = np.random.default_rng(seed)
        params = init_encoder_params(enc, rng)
        params.update(init_decoder_params(dec, rng))
        return cls(enc, dec, params, np.zeros(dec.d_y) if bop is None else np.asarray(bop, float),
                   normalizer or PoseNormalizer())

    def leaves(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def generate(self, music: np.ndarray, seed: int) -> np.ndarray:
        """Free-running dance for one feature sequence, in the data's pose units."""
        return self.generate_many([music], [seed])[0]

    def generate_many(self, musics: Sequence[np.ndarray], seeds: Sequence[int]) -> list[np.ndarray]:
        """Batched free-running rollouts; sequence ``i`` draws its initial state from ``seeds[i]``.

        All feature sequences must have the same length.
        """
        if len(musics) != len(seeds):
            raise ValueError("one seed per music sequence is required")
        for m in musics:
            if m.shape[1] != self.encoder.d_x:
                raise ValueError(f"feature width {m.shape[1]} does not match model d_x={self.encoder.d_x}")
        with no_grad():
            p = self.leaves()
            Zs = [encode(Tensor(m), p, self.encoder) for m in musics]
            states = [init_state(self.decoder, s, 1) for s in seeds]
            state = DecoderState(
                [Tensor(np.concatenate([st.h[i].data for st in states])) for i in range(self.decoder.n_layers)],
                [Tensor(np.concatenate([st.c[i].data for st in states])) for i in range(self.decoder.n_layers)],
            )
            preds, _ = run_decoder(Zs, p, self.decoder, state, self.bop)
        out = np.stack([y.data for y in preds], axis=1)  # (batch, n, d_y)
        return [self.normalizer.invert(o) for o in out]


def l1_loss(pred: Tensor, target: Tensor | np.ndarray, n_sequences: int) -> Tensor:
    """Summed absolute error over every frame and coordinate, divided by the number of sequences."""
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    return ops.scale(ops.abs_sum(ops.sub(pred, target)), 1.0 / n_sequences)


def batch_loss(
    model_params: dict[str, Tensor],
    musics: Sequence[np.ndarray],
    targets: np.ndarray,
    enc: EncoderConfig,
    dec: DecoderConfig,
    bop: np.ndarray,
    mask: Sequence[bool],
    state: DecoderState | int,
    detach: bool = False,
) -> Tensor:
    """Encode, decode under ``mask`` and score one batch; ``targets`` is (batch, n, d_y)."""
    Zs = [encode(Tensor(m), model_params, enc) for m in musics]
    preds, _ = scheduled_rollout(Zs, targets, bop, model_params, dec, mask, state, detach)
    stacked = ops.concat(preds, axis=0)  # step-major rows: (n * batch, d_y)
    flat = np.transpose(targets, (1, 0, 2)).reshape(-1, targets.shape[2])
    return l1_loss(stacked, flat, len(musics))


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def train(
    clips: Sequence[Clip],
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[DanceModel, TrainLog]:
    """Fit a model to aligned (music, pose) clips.

    Every random draw is keyed on ``(seed, epoch, batch)``, which is what makes
    a resumed run reproduce an uninterrupted one exactly.
    """
    clips = list(clips)
    if not clips:
        raise ValueError("training set is empty")
    n = len(clips[0].pose)
    for c in clips:
        if len(c.music) != len(c.pose):
            raise ValueError(f"clip {c.name!r} is not aligned")
        if len(c.pose) != n:
            raise ValueError("all training clips must share one length")
        if c.music.frames.shape[1] != config.encoder.d_x:
            raise ValueError(f"feature width {c.music.frames.shape[1]} != encoder.d_x {config.encoder.d_x}")
        if c.pose.frames.shape[1] != config.decoder.d_y:
            raise ValueError(f"pose width {c.pose.frames.shape[1]} != decoder.d_y {config.decoder.d_y}")

    musics = [c.music.frames for c in clips]
    normalizer = PoseNormalizer.fit([c.pose.frames for c in clips])
    poses = np.stack([normalizer.apply(c.pose.frames) for c in clips])
    bop = poses.reshape(-1, poses.shape[2]).mean(axis=0)

    if resume is not None:
        model, adam, start, history = load_checkpoint(resume)
        # seconds are not checkpointed; recover them from a sibling log if there is one
        _restore_seconds(history, Path(resume).parent / "train_log.csv")
    else:
        model = DanceModel.initialize(config.encoder, config.decoder, config.seed, bop, normalizer)
        adam = AdamState(lr=config.lr)
        start, history = 0, TrainLog()

    order_len = len(clips)
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        p = p_of_epoch(config.schedule, epoch, cap=n)
        mask = build_feed_mask(n, p, config.schedule.q)
        perm = _rng(config.seed, 1, epoch).permutation(order_len)
        total = 0.0
        for step, lo in enumerate(range(0, order_len, config.batch)):
            idx = perm[lo : lo + config.batch]
            leaves = model.leaves(requires_grad=True)
            state = init_state(config.decoder, np.random.SeedSequence([config.seed, 2, epoch, step]), len(idx))
            loss = batch_loss(
                leaves, [musics[i] for i in idx], poses[idx], config.encoder, config.decoder,
                model.bop, mask, state, config.detach,
            )
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, step, value)
            backward(loss)
            grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
            clip_global_norm(grads, config.clip_norm)
            adam_step(model.params, grads, adam)
            total += value * len(idx)
        mean_loss = total / order_len
        rec = EpochRecord(epoch, p, mean_loss, mean_loss / (n * config.decoder.d_y), time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d p=%d loss=%.6g", epoch, p, mean_loss)
        if on_epoch is not None:
            on_epoch(rec)
        if out_dir is not None and config.checkpoint_interval > 0 and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(model, adam, epoch + 1, history, Path(out_dir) / "checkpoint", config)

    if out_dir is not None:
        out = Path(out_dir)
        save_checkpoint(model, adam, config.epochs, history, out / "checkpoint", config)
        (out / "train_log.csv").write_text(history.to_csv(), encoding="utf-8")
    return model, history


def _restore_seconds(history: TrainLog, path: Path) -> None:
    if not path.exists():
        return
    with open(path, newline="", encoding="utf-8") as fh:
        seconds = {int(r["epoch"]): float(r["seconds"]) for r in csv.DictReader(fh) if r.get("seconds")}
    for r in history.records:
        r.seconds = seconds.get(r.epoch, r.seconds)


def _config_meta(config: TrainConfig | None) -> dict | None:
    if config is None:
        return None
    d = asdict(config)
    d["schedule"] = config.schedule.to_dict()
    return d


def save_checkpoint(
    model: DanceModel,
    adam: AdamState,
    epoch: int,
    history: TrainLog | None,
    path: str | Path,
    config: TrainConfig | None = None,
) -> Path:
    tensors: dict[str, np.ndarray] = dict(model.params)
    tensors["model.bop"] = model.bop
    tensors["model.norm_center"] = np.asarray(model.normalizer.center, dtype=np.float64)
    for k in model.params:
        if k in adam.m:
            tensors[f"adam.m.{k}"] = adam.m[k]
            tensors[f"adam.v.{k}"] = adam.v[k]
    meta = {
        "kind": CHECKPOINT_KIND,
        "epoch": int(epoch),
        "encoder": model.encoder.to_dict(),
        "decoder": model.decoder.to_dict(),
        "norm_scale": float(model.normalizer.scale),
        "adam": {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        # wall time is left out so identical runs write identical files
        "log": [[r.epoch, r.p, r.loss, r.loss_per_elem] for r in (history.records if history else [])],
        "train_config": _config_meta(config),
    }
    return save_tensors(path, tensors, meta)


def load_checkpoint(path: str | Path) -> tuple[DanceModel, AdamState, int, TrainLog]:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a model checkpoint")
    try:
        enc = EncoderConfig(**meta["encoder"])
        dec = DecoderConfig(**meta["decoder"])
        a = meta["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=int(a["t"]))
        params, bop, center = {}, tensors.pop("model.bop"), tensors.pop("model.norm_center")
        for k, v in tensors.items():
            if k.startswith("adam.m."):
                adam.m[k[len("adam.m."):]] = v
            elif k.startswith("adam.v."):
                adam.v[k[len("adam.v."):]] = v
            else:
                params[k] = v
        history = TrainLog([EpochRecord(int(e), int(p), float(l), float(le)) for e, p, l, le in meta["log"]])
        model = DanceModel(enc, dec, params, bop, PoseNormalizer(center, float(meta["norm_scale"])))
        return model, adam, int(meta["epoch"]), history
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt model checkpoint {path}: {exc!r}") from exc


def mean_displacement(poses: Sequence[np.ndarray], start_fraction: float = 0.75) -> float:
    """Mean frame-to-frame joint-vector displacement over the tail of each sequence."""
    vals = []
    for p in poses:
        tail = np.asarray(p)[int(start_fraction * len(p)) :]
        vals.append(np.linalg.norm(np.diff(tail, axis=0), axis=1).mean())
    return float(np.mean(vals))

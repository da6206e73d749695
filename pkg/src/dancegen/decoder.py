"""Autoregressive recurrent pose decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .numcore import Tensor, no_grad, ops


class DecoderError(ValueError):
    pass


@dataclass
class DecoderConfig:
    n_layers: int = 3
    d_s: int = 1024
    d_y: int = 50
    d_z: int = 256

    def __post_init__(self) -> None:
        for name in ("n_layers", "d_s", "d_y", "d_z"):
            if int(getattr(self, name)) < 1:
                raise DecoderError(f"decoder.{name} must be >= 1, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecoderState:
    """Per-layer hidden and cell matrices, each (batch, d_s)."""

    h: list[Tensor]
    c: list[Tensor]

    @property
    def top(self) -> Tensor:
        return self.h[-1]


def init_decoder_params(cfg: DecoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    lim = 1.0 / np.sqrt(cfg.d_s)
    for layer in range(cfg.n_layers):
        d_in = cfg.d_y if layer == 0 else cfg.d_s
        p[f"dec.l{layer}.w"] = rng.uniform(-lim, lim, size=(d_in + cfg.d_s, 4 * cfg.d_s))
        p[f"dec.l{layer}.b"] = rng.uniform(-lim, lim, size=4 * cfg.d_s)
    lim_out = 1.0 / np.sqrt(cfg.d_s + cfg.d_z)
    p["dec.ws"] = rng.uniform(-lim_out, lim_out, size=(cfg.d_s + cfg.d_z, cfg.d_y))
    p["dec.bs"] = np.zeros(cfg.d_y)
    return p


def init_state(cfg: DecoderConfig, seed: int | np.random.SeedSequence, batch: int = 1) -> DecoderState:
    """Sample every hidden and cell vector i.i.d. from N(0, 1)."""
    rng = np.random.default_rng(seed)
    hs, cs = [], []
    for _ in range(cfg.n_layers):
        hs.append(Tensor(rng.standard_normal((batch, cfg.d_s))))
        cs.append(Tensor(rng.standard_normal((batch, cfg.d_s))))
    return DecoderState(hs, cs)


def decode_step(
    state: DecoderState,
    prev_pose: Tensor,
    z_i: Tensor,
    params: dict[str, Tensor],
    cfg: DecoderConfig,
    bias_rows: Tensor | None = None,
) -> tuple[DecoderState, Tensor]:
    """Advance the recurrence on ``prev_pose`` and emit ``[h_top; z_i] W^S + b``.

    ``bias_rows`` may carry the output bias already tiled to the batch size so
    long rollouts do not re-tile it every step.
    """
    if not (np.all(np.isfinite(prev_pose.data)) and np.all(np.isfinite(z_i.data))):
        raise DecoderError("non-finite decoder input")
    if prev_pose.shape[-1] != cfg.d_y or z_i.shape[-1] != cfg.d_z:
        raise DecoderError(f"decoder inputs {prev_pose.shape}, {z_i.shape} do not match d_y={cfg.d_y}, d_z={cfg.d_z}")
    x = prev_pose
    hs, cs = [], []
    for layer in range(cfg.n_layers):
        hc = ops.lstm_cell(x, state.h[layer], state.c[layer], params[f"dec.l{layer}.w"], params[f"dec.l{layer}.b"])
        h = ops.slice_cols(hc, 0, cfg.d_s)
        c = ops.slice_cols(hc, cfg.d_s, 2 * cfg.d_s)
        hs.append(h)
        cs.append(c)
        x = h
    if bias_rows is None:
        bias_rows = ops.tile_rows(params["dec.bs"], x.shape[0])
    y = ops.add(ops.matmul(ops.concat([x, z_i], axis=-1), params["dec.ws"]), bias_rows)
    return DecoderState(hs, cs), y


def run_decoder(
    Zs: Sequence[Tensor],
    params: dict[str, Tensor],
    cfg: DecoderConfig,
    state: DecoderState,
    y0: np.ndarray,
    feed_pred: Sequence[bool] | None = None,
    targets: np.ndarray | None = None,
    detach: bool = False,
) -> tuple[list[Tensor], list[np.ndarray]]:
    """Roll the decoder over a batch of equal-length latent sequences.

    The input at step 1 is ``y0``. For step ``i > 1`` it is the previous
    prediction when ``feed_pred[i-2]`` is true, else ``targets[:, i-2]``.
    ``feed_pred=None`` means fully free-running.

    Returns the per-step predictions (each (batch, d_y)) and the per-step
    input poses actually fed.
    """
    bsz = len(Zs)
    n = Zs[0].shape[0]
    if any(z.shape != (n, cfg.d_z) for z in Zs):
        raise DecoderError("latent sequences must share shape (n, d_z)")
    if feed_pred is not None and len(feed_pred) != n:
        raise DecoderError(f"feed pattern length {len(feed_pred)} != sequence length {n}")
    if targets is not None and targets.shape != (bsz, n, cfg.d_y):
        raise DecoderError(f"targets shape {targets.shape} != {(bsz, n, cfg.d_y)}")
    if feed_pred is not None and targets is None and not all(feed_pred[:-1]):
        raise DecoderError("ground-truth feeding requires targets")

    z_all = Zs[0] if bsz == 1 else ops.concat(list(Zs), axis=0)
    offsets = np.arange(bsz) * n
    bias_rows = ops.tile_rows(params["dec.bs"], bsz)
    prev = Tensor(np.tile(np.asarray(y0, dtype=np.float64).reshape(1, -1), (bsz, 1)))
    preds: list[Tensor] = []
    fed: list[np.ndarray] = []
    for i in range(n):
        if i > 0:
            if feed_pred is None or feed_pred[i - 1]:
                prev = Tensor(preds[-1].data) if detach else preds[-1]
            else:
                prev = Tensor(targets[:, i - 1, :])
        fed.append(prev.data)
        z_i = ops.take_rows(z_all, offsets + i)
        state, y = decode_step(state, prev, z_i, params, cfg, bias_rows)
        preds.append(y)
    return preds, fed


def generate(
    Z: Tensor | np.ndarray,
    y0: np.ndarray,
    params: dict[str, Tensor],
    cfg: DecoderConfig,
    seed: int,
) -> np.ndarray:
    """Free-running rollout of one sequence; returns an (n, d_y) pose array."""
    if not isinstance(Z, Tensor):
        Z = Tensor(Z)
    if not np.all(np.isfinite(Z.data)):
        raise DecoderError("non-finite latent sequence")
    with no_grad():
        preds, _ = run_decoder([Z], params, cfg, init_state(cfg, seed, 1), y0)
    return np.concatenate([p.data for p in preds], axis=0)

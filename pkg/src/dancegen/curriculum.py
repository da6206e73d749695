"""Dynamic auto-condition schedule.

During training the decoder input alternates between ``p`` of its own
predictions and ``q`` ground-truth frames; ``p`` grows with the epoch count.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .decoder import DecoderConfig, DecoderState, init_state, run_decoder
from .numcore import Tensor

PRED = True
GT = False

# uncapped schedules saturate here so p stays a monotone machine integer
P_CEILING = 2**62

KINDS = ("constant", "linear", "quadratic", "exponential", "teacher_forcing")


class CurriculumError(ValueError):
    pass


@dataclass
class CurriculumSchedule:
    kind: str = "linear"
    lam: float = 0.01
    q: int = 10
    const_p: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise CurriculumError(f"unknown curriculum kind {self.kind!r}; expected one of {KINDS}")
        if not self.lam > 0:
            raise CurriculumError(f"curriculum.lambda must be positive, got {self.lam}")
        if int(self.q) < 1:
            raise CurriculumError(f"curriculum.q must be >= 1, got {self.q}")
        if int(self.const_p) < 0:
            raise CurriculumError(f"curriculum.const_p must be >= 0, got {self.const_p}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def p_of_epoch(schedule: CurriculumSchedule, t: int, cap: int | None = None) -> int:
    """Number of consecutive self-fed steps at epoch ``t`` (0-based).

    ``cap`` bounds the result, normally at the sequence length.
    """
    if t < 0:
        raise CurriculumError(f"epoch must be >= 0, got {t}")
    kind, lam = schedule.kind, schedule.lam
    if kind == "teacher_forcing":
        p = 0
    elif kind == "constant":
        p = int(schedule.const_p)
    elif kind == "linear":
        p = math.floor(lam * t)
    elif kind == "quadratic":
        p = math.floor(lam * t * t)
    else:
        # e^t overflows a float past t ~ 709; any cap is long exceeded by then
        log_val = math.log(lam) + t
        p = math.floor(math.exp(log_val)) if log_val < math.log(P_CEILING) else P_CEILING
    p = min(p, P_CEILING if cap is None else cap)
    return int(p)


def build_feed_mask(n: int, p: int, q: int) -> list[bool]:
    """Per-step flags over steps 1..n: ``PRED`` for p steps, ``GT`` for q steps, repeating."""
    if n < 1 or p < 0 or q < 1:
        raise CurriculumError(f"invalid mask request n={n}, p={p}, q={q}")
    if p == 0:
        return [GT] * n
    period = p + q
    return [PRED if (i % period) < p else GT for i in range(n)]


def scheduled_rollout(
    Zs: Sequence[Tensor] | Tensor,
    Y_gt: np.ndarray,
    y0: np.ndarray,
    params: dict[str, Tensor],
    cfg: DecoderConfig,
    mask: Sequence[bool],
    state: DecoderState | int,
    detach: bool = False,
) -> tuple[list[Tensor], list[np.ndarray]]:
    """Decode with the input at step ``i > 1`` chosen by ``mask[i-1]``.

    ``Zs`` is a single (n, d_z) latent sequence or a batch of them; ``Y_gt``
    is (n, d_y) or (batch, n, d_y) accordingly. Gradients flow through fed-back
    predictions unless ``detach`` is set. ``state`` may be a seed, in which
    case the initial state is sampled from it.
    """
    if isinstance(Zs, Tensor):
        Zs = [Zs]
    Y = np.asarray(Y_gt, dtype=np.float64)
    if Y.ndim == 2:
        Y = Y[None]
    n = Zs[0].shape[0]
    if len(mask) != n or Y.shape[:2] != (len(Zs), n):
        raise CurriculumError(
            f"length mismatch: mask {len(mask)}, latents {n}, targets {Y.shape[1] if Y.ndim == 3 else Y.shape}"
        )
    if not isinstance(state, DecoderState):
        state = init_state(cfg, state, len(Zs))
    return run_decoder(Zs, params, cfg, state, y0, feed_pred=list(mask), targets=Y, detach=detach)

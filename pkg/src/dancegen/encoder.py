"""Music encoder: linear embedding then a stack of windowed self-attention layers."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numcore import Tensor, ops
from .numcore.ops import band_pair_count, band_softmax


class EncoderError(ValueError):
    pass


@dataclass
class EncoderConfig:
    n_layers: int = 2
    n_heads: int = 8
    d_x: int = 438
    d_z: int = 256
    d_k: int = 64
    d_v: int = 64
    window: int = 100
    ffn_hidden: int = 1024
    attention: str = "local"  # "local" or "global"
    layer_norm: bool = True
    positional: bool = False

    def __post_init__(self) -> None:
        for name in ("n_layers", "n_heads", "d_x", "d_z", "d_k", "d_v", "window", "ffn_hidden"):
            if int(getattr(self, name)) < 1:
                raise EncoderError(f"encoder.{name} must be >= 1, got {getattr(self, name)}")
        if self.attention not in ("local", "global"):
            raise EncoderError(f"encoder.attention must be 'local' or 'global', got {self.attention!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {"enc.embed": _glorot(rng, cfg.d_x, cfg.d_z)}
    for layer in range(cfg.n_layers):
        pre = f"enc.l{layer}"
        for h in range(cfg.n_heads):
            p[f"{pre}.h{h}.wq"] = _glorot(rng, cfg.d_z, cfg.d_k)
            p[f"{pre}.h{h}.wk"] = _glorot(rng, cfg.d_z, cfg.d_k)
            p[f"{pre}.h{h}.wv"] = _glorot(rng, cfg.d_z, cfg.d_v)
        p[f"{pre}.wo"] = _glorot(rng, cfg.n_heads * cfg.d_v, cfg.d_z)
        p[f"{pre}.ln1.g"] = np.ones(cfg.d_z)
        p[f"{pre}.ln1.b"] = np.zeros(cfg.d_z)
        p[f"{pre}.ffn.w1"] = _glorot(rng, cfg.d_z, cfg.ffn_hidden)
        p[f"{pre}.ffn.b1"] = np.zeros(cfg.ffn_hidden)
        p[f"{pre}.ffn.w2"] = _glorot(rng, cfg.ffn_hidden, cfg.d_z)
        p[f"{pre}.ffn.b2"] = np.zeros(cfg.d_z)
        p[f"{pre}.ln2.g"] = np.ones(cfg.d_z)
        p[f"{pre}.ln2.b"] = np.zeros(cfg.d_z)
    return p


def embed(X: Tensor, w_embed: Tensor) -> Tensor:
    """``U = X W^E`` (no bias)."""
    if X.data.ndim != 2 or X.shape[1] != w_embed.shape[0]:
        raise EncoderError(f"feature width {X.shape[-1]} does not match embedding rows {w_embed.shape[0]}")
    return ops.matmul(X, w_embed)


def local_window(i: int, n: int, k: int) -> tuple[int, int]:
    """1-based inclusive index range that position ``i`` attends to."""
    half = k // 2
    return max(1, i - half), min(n, i + half)


def attention_pair_count(n: int, k: int) -> int:
    """How many (query, key) pairs windowed attention scores for a length-``n`` input."""
    return band_pair_count(n, k // 2)


def local_attention(U: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, k: int) -> tuple[Tensor, np.ndarray]:
    """One head of windowed attention.

    Returns the head output ``a`` (n, d_v) and the dense (n, n) weight matrix,
    which is exactly zero outside each row's window.
    """
    q = ops.matmul(U, wq)
    key = ops.matmul(U, wk)
    val = ops.matmul(U, wv)
    a = ops.banded_attention(q, key, val, k // 2)
    alpha_band, cols, valid = band_softmax(q.data, key.data, k // 2)
    n = U.shape[0]
    dense = np.zeros((n, n))
    rows = np.broadcast_to(np.arange(n)[:, None], cols.shape)
    dense[rows[valid], cols[valid]] = alpha_band[valid]
    return a, dense


def _global_head(U: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, d_k: int) -> Tensor:
    q = ops.matmul(U, wq)
    key = ops.matmul(U, wk)
    val = ops.matmul(U, wv)
    scores = ops.scale(ops.matmul(q, ops.transpose(key)), 1.0 / np.sqrt(d_k))
    return ops.matmul(ops.softmax(scores), val)


def sinusoidal_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _check_finite(t: Tensor, where: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise EncoderError(f"non-finite values in encoder {where}")


def encode(X: Tensor | np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Map an (n, d_x) feature sequence to its (n, d_z) latent sequence."""
    if not isinstance(X, Tensor):
        X = Tensor(X)
    if not np.all(np.isfinite(X.data)):
        raise EncoderError("non-finite values in encoder input")
    n = X.shape[0]
    h = embed(X, params["enc.embed"])
    if cfg.positional:
        h = ops.add(h, Tensor(sinusoidal_table(n, cfg.d_z)))

    for layer in range(cfg.n_layers):
        pre = f"enc.l{layer}"
        heads = []
        for hd in range(cfg.n_heads):
            wq, wk, wv = (params[f"{pre}.h{hd}.{w}"] for w in ("wq", "wk", "wv"))
            if cfg.attention == "global":
                heads.append(_global_head(h, wq, wk, wv, cfg.d_k))
            else:
                q, key, val = ops.matmul(h, wq), ops.matmul(h, wk), ops.matmul(h, wv)
                heads.append(ops.banded_attention(q, key, val, cfg.window // 2))
        att = heads[0] if len(heads) == 1 else ops.concat(heads, axis=-1)
        h = ops.add(h, ops.matmul(att, params[f"{pre}.wo"]))
        if cfg.layer_norm:
            h = ops.layer_norm(h, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        _check_finite(h, f"layer {layer} attention sublayer")

        hidden = ops.relu(
            ops.add(ops.matmul(h, params[f"{pre}.ffn.w1"]), ops.tile_rows(params[f"{pre}.ffn.b1"], n))
        )
        ff = ops.add(ops.matmul(hidden, params[f"{pre}.ffn.w2"]), ops.tile_rows(params[f"{pre}.ffn.b2"], n))
        h = ops.add(h, ff)
        if cfg.layer_norm:
            h = ops.layer_norm(h, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        _check_finite(h, f"layer {layer} feed-forward sublayer")
    return h

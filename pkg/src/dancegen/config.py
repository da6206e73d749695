"""Run configuration: JSON document with fixed sections and ``section.key=value`` overrides."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from .curriculum import CurriculumSchedule
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .training import TrainConfig

DEFAULTS: dict[str, dict[str, Any]] = {
    "data": {
        "styles": 3,
        "clips_per_style": 20,
        "frames": 900,
        "fps": 15.0,
        "seed": 0,
        "test_fraction": 0.1,
        "noise": 0.01,
    },
    "encoder": {
        "N": 2,
        "l": 8,
        "d_k": 64,
        "d_v": 64,
        "k": 100,
        "d_x": 438,
        "d_z": 256,
        "ffn_hidden": 1024,
        "positional": False,
        "attention": "local",
        "layer_norm": True,
    },
    "decoder": {"layers": 3, "d_s": 1024, "d_y": 50},
    "curriculum": {"kind": "linear", "lambda": 0.01, "q": 10, "const_p": 0},
    "train": {
        "epochs": 100,
        "batch": 8,
        "lr": 1e-4,
        "seed": 0,
        "clip_norm": 5.0,
        "checkpoint_interval": 10,
        "detach": False,
    },
    "metrics": {
        "dt": 1.0 / 15.0,
        "window": 5,
        "prominence": None,
        "num_pairs": 500,
        "fid_window_seconds": 4.0,
        "fid_strict": False,
        "classifier_hidden": 128,
        "classifier_epochs": 300,
        "max_clips": 60,
        "multimodality_samples": 5,
        "seed": 0,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict[str, dict[str, Any]]:
    """Defaults, then the JSON file at ``path``, then ``section.key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, doc)
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg = _merge(cfg, {section: {name: value}})
    return cfg


def dump_config(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def encoder_config(cfg: dict) -> EncoderConfig:
    e = cfg["encoder"]
    return EncoderConfig(
        n_layers=int(e["N"]), n_heads=int(e["l"]), d_x=int(e["d_x"]), d_z=int(e["d_z"]),
        d_k=int(e["d_k"]), d_v=int(e["d_v"]), window=int(e["k"]), ffn_hidden=int(e["ffn_hidden"]),
        attention=str(e["attention"]), layer_norm=bool(e["layer_norm"]), positional=bool(e["positional"]),
    )


def decoder_config(cfg: dict) -> DecoderConfig:
    d = cfg["decoder"]
    return DecoderConfig(n_layers=int(d["layers"]), d_s=int(d["d_s"]), d_y=int(d["d_y"]), d_z=int(cfg["encoder"]["d_z"]))


def schedule_config(cfg: dict) -> CurriculumSchedule:
    c = cfg["curriculum"]
    return CurriculumSchedule(kind=str(c["kind"]), lam=float(c["lambda"]), q=int(c["q"]), const_p=int(c["const_p"]))


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=int(t["epochs"]), batch=int(t["batch"]), lr=float(t["lr"]), seed=int(t["seed"]),
        clip_norm=float(t["clip_norm"]), checkpoint_interval=int(t["checkpoint_interval"]),
        detach=bool(t["detach"]), schedule=schedule_config(cfg), encoder=encoder_config(cfg),
        decoder=decoder_config(cfg),
    )

"""Command-line entry point: synth-data, train, generate, evaluate, beats."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datapipe, metrics
from .config import ConfigError, dump_config, load_config, train_config
from .numcore import CheckpointError, NonFiniteGradientError
from .training import DanceModel, TrainingDivergedError, load_checkpoint, train

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("dancegen")


class InputError(Exception):
    pass


def _config(args) -> dict:
    return load_config(getattr(args, "config", None), getattr(args, "set", None))


def _writable_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc}") from exc
    return out


def cmd_synth_data(args) -> int:
    cfg = _config(args)
    d = cfg["data"]
    if int(d["clips_per_style"]) < 1 or int(d["styles"]) < 1:
        raise InputError("at least one clip must be requested")
    out = _writable_dir(args.out)
    ds = datapipe.synth_corpus(
        n_styles=int(d["styles"]), clips_per_style=int(d["clips_per_style"]), n=int(d["frames"]),
        fps=float(d["fps"]), seed=int(d["seed"]), noise=float(d["noise"]), test_fraction=float(d["test_fraction"]),
    )
    if datapipe.layout_width(ds.layout) != int(cfg["encoder"]["d_x"]):
        log.warning("corpus width %d differs from encoder.d_x", datapipe.layout_width(ds.layout))
    datapipe.save_dataset(ds, out)
    dump_config(cfg, out / "config.json")
    n_train, n_test = len(ds.split("train")), len(ds.split("test"))
    print(f"wrote {len(ds)} clips ({n_train} train / {n_test} test), {d['frames']} frames each, to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    tc = train_config(cfg)
    ds = datapipe.load_dataset(args.data)
    clips = ds.split("train")
    if not clips:
        raise InputError(f"dataset {args.data} has no train split")
    width = datapipe.layout_width(ds.layout)
    if width != tc.encoder.d_x:
        raise InputError(f"dataset feature width {width} != encoder.d_x {tc.encoder.d_x}")
    out = _writable_dir(args.out)
    dump_config(cfg, out / "config.json")
    _, history = train(clips, tc, out_dir=out, resume=args.resume)
    last = history.records[-1]
    print(f"trained {tc.epochs} epochs; final p={last.p} loss={last.loss:.6g} per-element={last.loss_per_elem:.6g}")
    return EXIT_OK


def _load_model(path: str) -> DanceModel:
    try:
        model, _, _, _ = load_checkpoint(path)
    except CheckpointError as exc:
        raise InputError(str(exc)) from exc
    return model


def cmd_generate(args) -> int:
    model = _load_model(args.checkpoint)
    frames, fps, _ = datapipe.read_clip(args.music)
    if frames.shape[1] != model.encoder.d_x:
        raise InputError(f"music width {frames.shape[1]} does not match checkpoint d_x {model.encoder.d_x}")
    poses = model.generate(frames, args.seed)
    datapipe.write_clip(args.out, poses, fps, comments=[f"seed={args.seed}"])
    print(f"wrote {len(poses)} poses to {args.out}")
    return EXIT_OK


def _group_by_length(items):
    groups: dict[int, list[int]] = {}
    for i, m in enumerate(items):
        groups.setdefault(len(m), []).append(i)
    return groups


def _generate_all(model: DanceModel, musics: list[np.ndarray], seeds: list[int]) -> list[np.ndarray]:
    out: list[np.ndarray | None] = [None] * len(musics)
    for idx in _group_by_length(musics).values():
        gen = model.generate_many([musics[i] for i in idx], [seeds[i] for i in idx])
        for i, g in zip(idx, gen):
            out[i] = g
    return out  # type: ignore[return-value]


def evaluate(model: DanceModel | None, ds: datapipe.DanceDataset, cfg: dict) -> metrics.MetricsReport:
    """Full metric suite on the test split; ``model=None`` scores the real test dances themselves."""
    m = cfg["metrics"]
    train_clips, test_clips = ds.split("train"), ds.split("test")
    if not train_clips or not test_clips:
        raise InputError("evaluation needs both a train and a test split")
    seed = int(m["seed"])
    rng = np.random.default_rng(seed)
    if len(test_clips) > int(m["max_clips"]):
        pick = np.sort(rng.choice(len(test_clips), size=int(m["max_clips"]), replace=False))
        test_clips = [test_clips[i] for i in pick]

    ccfg = metrics.ClassifierConfig(
        hidden=int(m["classifier_hidden"]), epochs=int(m["classifier_epochs"]),
        n_styles=max(c.style for c in ds.clips) + 1,
    )
    clf = metrics.train_style_classifier([c.pose.frames for c in train_clips], [c.style for c in train_clips], ccfg, seed)

    musics = [c.music.frames for c in test_clips]
    real = [c.pose.frames for c in test_clips]
    labels = [c.style for c in test_clips]
    if model is None:
        generated = real
        groups = None
    else:
        generated = _generate_all(model, musics, [seed + i for i in range(len(musics))])
        k = int(m["multimodality_samples"])
        samples = [_generate_all(model, musics, [seed + 1000 * (r + 1) + i for i in range(len(musics))]) for r in range(k)]
        groups = [metrics.extract_features(clf, [s[i] for s in samples]) for i in range(len(musics))]

    strict = bool(m["fid_strict"])
    f_gen = metrics.extract_features(clf, generated)
    f_real = metrics.extract_features(clf, real)
    fps = ds.fps
    dt_frames = round(float(m["dt"]) * fps, 9)
    b_k = b_m = b_a = 0
    for clip, g in zip(test_clips, generated):
        kin = metrics.kinematic_beats(g, int(m["window"]), m["prominence"])
        try:
            mus = metrics.musical_beats(clip.music.channel("beat_onehot"), "onehot")
        except KeyError:
            mus = metrics.musical_beats(clip.music.channel("onset"), "onset")
        b_k += len(kin)
        b_m += len(mus)
        b_a += metrics.match_beats(kin, mus, dt_frames)
    if b_m == 0:
        raise metrics.MetricsError("test clips contain no musical beats")

    window = int(round(float(m["fid_window_seconds"]) * fps))
    return metrics.MetricsReport(
        fid=metrics.fid(f_gen, f_real, strict=strict),
        style_acc=metrics.style_accuracy(clf, generated, labels),
        beat_coverage=b_k / b_m,
        beat_hit_rate=(b_a / b_k) if b_k else 0.0,
        diversity=metrics.diversity(f_gen, int(m["num_pairs"]), seed),
        multimodality=None if groups is None else metrics.multimodality(groups, seed),
        fid_over_time=metrics.fid_over_time(generated, real, clf, window, strict=strict),
        extra={"test_clips": len(test_clips), "kinematic_beats": b_k, "musical_beats": b_m, "aligned_beats": b_a},
    )


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ds = datapipe.load_dataset(args.data)
    if args.checkpoint is None and not args.real:
        raise InputError("either --checkpoint or --real is required")
    model = None if args.real else _load_model(args.checkpoint)
    report = evaluate(model, ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    out.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    out.with_name(out.stem + "_fid_over_time.csv").write_text(report.fid_over_time_csv(), encoding="utf-8")
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_beats(args) -> int:
    cfg = _config(args)
    m = cfg["metrics"]
    music, fps, _ = datapipe.read_clip(args.music)
    poses, _, _ = datapipe.read_clip(args.pose)
    if len(music) != len(poses):
        raise InputError(f"music has {len(music)} frames, pose has {len(poses)}")
    # default layout ends with the onset strength then the beat indicator
    channel = music[:, -1] if args.channel == "onehot" else music[:, -2]
    mus = metrics.musical_beats(channel, args.channel, args.threshold)
    kin = metrics.kinematic_beats(poses, int(m["window"]), m["prominence"])
    dt = round(float(m["dt"]) * fps, 9)
    coverage, hit = metrics.beat_coverage_hit(kin, mus, dt)
    print(json.dumps({
        "kinematic_beats": kin.tolist(), "musical_beats": mus.tolist(), "dt_frames": dt,
        "beat_coverage": coverage, "beat_hit_rate": hit,
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dancegen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        return p

    p = with_config(sub.add_parser("synth-data", help="write a synthetic corpus"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = with_config(sub.add_parser("train", help="train a model on a dataset's train split"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a dance for one music clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--music", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = with_config(sub.add_parser("evaluate", help="compute the metric suite on the test split"))
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--real", action="store_true", help="score the real test dances instead of generated ones")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("beats", help="beat lists and coverage/hit rate for one clip pair"))
    p.add_argument("--music", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--channel", choices=("onehot", "onset"), default="onehot")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_beats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TrainingDivergedError, NonFiniteGradientError, FloatingPointError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConfigError, datapipe.DataError, CheckpointError, metrics.MetricsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

import numpy as np
import pytest
from conftest import toy_train_config

from dancegen.curriculum import GT, scheduled_rollout
from dancegen.datapipe import PoseNormalizer, synth_corpus
from dancegen.decoder import DecoderConfig, init_state
from dancegen.encoder import encode
from dancegen.numcore import Tensor
from dancegen.training import (
    DanceModel,
    TrainingDivergedError,
    batch_loss,
    l1_loss,
    load_checkpoint,
    mean_displacement,
    save_checkpoint,
    train,
)


def test_l1_identical_is_zero():
    y = np.random.default_rng(0).normal(size=(4, 3))
    assert float(l1_loss(Tensor(y), y, 1).data) == 0.0


def test_l1_hand_value():
    assert float(l1_loss(Tensor([[1.0, 2.0]]), np.zeros((1, 2)), 1).data) == 3.0


def test_l1_matches_brute_force_over_two_sequences():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 3))
    total = 0.0
    for s in range(2):
        for i in range(5):
            for j in range(3):
                total += abs(a[s, i, j] - b[s, i, j])
    got = float(l1_loss(Tensor(a.reshape(10, 3)), b.reshape(10, 3), 2).data)
    assert got == pytest.approx(total / 2, rel=1e-14)


def test_l1_shape_mismatch():
    with pytest.raises(ValueError):
        l1_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)), 1)


def test_batch_loss_equals_independent_accumulation(toy_corpus):
    cfg = toy_train_config()
    model = DanceModel.initialize(cfg.encoder, cfg.decoder, 0)
    clips = toy_corpus.clips[:3]
    norm = PoseNormalizer.fit([c.pose.frames for c in clips])
    targets = np.stack([norm.apply(c.pose.frames) for c in clips])
    n = targets.shape[1]
    mask = [GT] * n
    params = model.leaves()
    loss = batch_loss(params, [c.music.frames for c in clips], targets, cfg.encoder, cfg.decoder,
                      model.bop, mask, init_state(cfg.decoder, 4, 3))

    Zs = [encode(c.music.frames, params, cfg.encoder) for c in clips]
    preds, _ = scheduled_rollout(Zs, targets, model.bop, params, cfg.decoder, mask, init_state(cfg.decoder, 4, 3))
    acc = 0.0
    for i, p in enumerate(preds):
        acc += float(np.abs(p.data - targets[:, i, :]).sum())
    assert float(loss.data) == pytest.approx(acc / 3, rel=1e-13)


def test_teacher_forcing_converges_on_tiny_dataset():
    ds = synth_corpus(n_styles=2, clips_per_style=2, n=64, seed=3, noise=0.0)
    cfg = toy_train_config("teacher_forcing", epochs=300, lr=3e-3, batch=4)
    cfg.decoder = DecoderConfig(n_layers=1, d_s=64, d_y=50, d_z=cfg.encoder.d_z)
    _, log = train(ds.clips, cfg)
    norm = PoseNormalizer.fit([c.pose.frames for c in ds.clips])
    poses = np.stack([norm.apply(c.pose.frames) for c in ds.clips])
    mad = np.abs(poses - poses.mean(axis=(0, 1))).mean()
    assert log.records[-1].loss_per_elem < 0.1 * mad
    assert log.losses[-1] < log.losses[0]


def test_tiny_lambda_dynamic_equals_teacher_forcing(toy_corpus):
    _, a = train(toy_corpus.clips, toy_train_config("teacher_forcing", epochs=3))
    _, b = train(toy_corpus.clips, toy_train_config("linear", epochs=3, lam=0.01))  # p = floor(0.01 t) = 0
    assert [r.p for r in b.records] == [0, 0, 0]
    assert a.to_csv(include_seconds=False) == b.to_csv(include_seconds=False)


def test_dynamic_schedule_changes_training(toy_corpus):
    _, a = train(toy_corpus.clips, toy_train_config("teacher_forcing", epochs=3))
    _, b = train(toy_corpus.clips, toy_train_config("constant", epochs=3, const_p=3))
    assert a.losses != b.losses


def test_same_seed_same_run(toy_corpus):
    m1, a = train(toy_corpus.clips, toy_train_config("linear", epochs=2, lam=1.0))
    m2, b = train(toy_corpus.clips, toy_train_config("linear", epochs=2, lam=1.0))
    assert a.losses == b.losses
    for k in m1.params:
        np.testing.assert_array_equal(m1.params[k], m2.params[k])


def test_resume_is_bit_exact(toy_corpus, tmp_path):
    full_cfg = toy_train_config("linear", epochs=4, lam=1.0)
    _, full = train(toy_corpus.clips, full_cfg, out_dir=tmp_path / "full")
    half_cfg = toy_train_config("linear", epochs=2, lam=1.0)
    train(toy_corpus.clips, half_cfg, out_dir=tmp_path / "part")
    _, resumed = train(toy_corpus.clips, full_cfg, out_dir=tmp_path / "part", resume=tmp_path / "part" / "checkpoint")
    assert resumed.to_csv(include_seconds=False) == full.to_csv(include_seconds=False)
    for name in ("manifest.json", "tensors.bin"):
        assert (tmp_path / "full" / "checkpoint" / name).read_bytes() == (
            tmp_path / "part" / "checkpoint" / name
        ).read_bytes()


def test_checkpoint_save_load_save_identical(toy_corpus, tmp_path):
    cfg = toy_train_config(epochs=2)
    train(toy_corpus.clips, cfg, out_dir=tmp_path / "run")
    model, adam, epoch, history = load_checkpoint(tmp_path / "run" / "checkpoint")
    assert epoch == 2 and len(history.records) == 2
    save_checkpoint(model, adam, epoch, history, tmp_path / "again", cfg)
    for name in ("manifest.json", "tensors.bin"):
        assert (tmp_path / "run" / "checkpoint" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_checkpointed_model_generates_identically(toy_corpus, tmp_path):
    model, _ = train(toy_corpus.clips, toy_train_config(epochs=1), out_dir=tmp_path)
    loaded, *_ = load_checkpoint(tmp_path / "checkpoint")
    music = toy_corpus.clips[0].music.frames
    np.testing.assert_array_equal(model.generate(music, 5), loaded.generate(music, 5))
    assert not np.array_equal(loaded.generate(music, 5), loaded.generate(music, 6))


def test_nan_loss_aborts_with_context(toy_corpus, monkeypatch):
    import dancegen.training as training
    from dancegen.numcore import ops

    real = training.batch_loss
    calls = []

    def poisoned(*args, **kw):
        calls.append(1)
        loss = real(*args, **kw)
        return ops.scale(loss, float("nan")) if len(calls) == 3 else loss

    monkeypatch.setattr(training, "batch_loss", poisoned)
    with pytest.raises(TrainingDivergedError) as err:
        train(toy_corpus.clips, toy_train_config(epochs=3, batch=4))  # two steps per epoch
    assert (err.value.epoch, err.value.step) == (1, 0)
    assert "epoch 1, step 0" in str(err.value)


def test_train_log_csv_columns(toy_corpus, tmp_path):
    train(toy_corpus.clips, toy_train_config(epochs=2), out_dir=tmp_path)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == "epoch,p,loss,loss_per_elem,seconds"
    assert len(lines) == 3


def test_mean_displacement_of_still_pose_is_zero():
    assert mean_displacement([np.ones((20, 50))]) == 0.0
    walk = np.cumsum(np.full((20, 2), [3.0, 4.0]), axis=0)
    assert mean_displacement([walk]) == pytest.approx(5.0)

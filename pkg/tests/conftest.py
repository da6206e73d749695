import numpy as np
import pytest

from dancegen.curriculum import CurriculumSchedule
from dancegen.datapipe import synth_corpus
from dancegen.decoder import DecoderConfig
from dancegen.encoder import EncoderConfig
from dancegen.training import TrainConfig


def toy_configs(d_x=438):
    enc = EncoderConfig(n_layers=1, n_heads=2, d_x=d_x, d_z=8, d_k=4, d_v=4, window=4, ffn_hidden=16)
    dec = DecoderConfig(n_layers=1, d_s=12, d_y=50, d_z=8)
    return enc, dec


def toy_train_config(kind="teacher_forcing", epochs=3, lam=0.05, const_p=0, **kw):
    enc, dec = toy_configs()
    return TrainConfig(epochs=epochs, batch=kw.pop("batch", 4), lr=kw.pop("lr", 1e-3), encoder=enc, decoder=dec,
                       schedule=CurriculumSchedule(kind, lam, 10, const_p), **kw)


@pytest.fixture(scope="session")
def toy_corpus():
    """Six short synthetic clips, two per style."""
    return synth_corpus(n_styles=3, clips_per_style=2, n=32, seed=11, test_fraction=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)

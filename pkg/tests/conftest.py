"""Shared fixtures: vocabularies, small corpora, and a quickly-trained
tiny model for decode/serve tests."""

from __future__ import annotations

import numpy as np
import pytest

from reflectnovo import (
    ModelConfig,
    SynthConfig,
    TrainConfig,
    build_vocabulary,
    generate_corpus,
    train,
)
from reflectnovo.augment import AugmentConfig
from reflectnovo.spectrum import PreprocessConfig


@pytest.fixture(scope="session")
def full_vocab():
    return build_vocabulary()


@pytest.fixture(scope="session")
def desk_vocab():
    """The 10-residue desk-scale alphabet."""
    return build_vocabulary(alphabet=list("GASPVTLNDK"))


@pytest.fixture(scope="session")
def tiny_vocab():
    return build_vocabulary(alphabet=list("GAS"))


TINY_SYNTH = SynthConfig(
    n_min=2,
    n_max=4,
    noise_peaks_mean=2.0,
    peak_dropout=0.02,
    mz_jitter=0.002,
)

TINY_MODEL = ModelConfig(
    vocab_size=7,
    d=32,
    layers=1,
    heads=2,
    ffn=64,
    max_decode_len=40,
    lambda_min=0.01,
)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_vocab):
    return generate_corpus(tiny_vocab, TINY_SYNTH, count=110, seed=9)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_vocab, tiny_corpus):
    """A small model trained for a few hundred steps on the 3-residue task;
    good enough to decode clean spectra and to exercise reflection."""
    train_psms, test_psms = tiny_corpus
    cfg = TrainConfig(
        batch_size=32,
        total_steps=500,
        peak_lr=3e-3,
        warmup_steps=50,
        validation_interval=250,
        augment=AugmentConfig(alpha=0.5, strategy_mix=0.5),
        init_seed=0,
        data_seed=1,
        augment_seed=2,
    )
    ckpt, metrics = train(train_psms, test_psms, TINY_MODEL, cfg, tiny_vocab)
    return ckpt


@pytest.fixture(scope="session")
def tiny_model(tiny_checkpoint):
    return tiny_checkpoint.model


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def preprocess_cfg():
    return PreprocessConfig()

import numpy as np
import pytest

from maskdiff.categorical import Rng, Vocabulary
from maskdiff.corpus import Markov1Generator
from maskdiff.denoiser import ModelConfig
from maskdiff.training import TrainConfig, train

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, name, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{key:02d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def vocab3():
    return Vocabulary(3)


@pytest.fixture
def vocab4():
    return Vocabulary(4)


@pytest.fixture(scope="session")
def markov_small():
    """Markov corpus (K_data=4, L=8) with a briefly trained time-free checkpoint."""
    gen = Markov1Generator(4, 8)
    train_seqs = gen.sample(2000, Rng(11))
    test_seqs = gen.sample(64, Rng(12))
    cfg = ModelConfig(K=5, L=8, d_emb=24, d_hidden=48)
    res = train(cfg, TrainConfig(steps=1500, batch_size=64, lr=3e-3, warmup_steps=100, seed=3, log_every=0), train_seqs)
    return gen, train_seqs, test_seqs, res.denoiser


def random_x(vocab, L, rng):
    return vocab.data_tokens[rng.integers(0, vocab.K_data, size=L)]

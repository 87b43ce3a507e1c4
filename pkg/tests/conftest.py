from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from changemap.compressed_map import CompressedMap, build_place_models  # noqa: E402
from changemap.synth import SynthConfig, synth_generate  # noqa: E402
from changemap.vocabulary import build_vocabulary  # noqa: E402

SMALL_VOCAB_BITS = 11


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_descriptors(rng, n, nbytes=32):
    return rng.integers(0, 256, size=(n, nbytes), dtype=np.uint8)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SynthConfig(n_change=3, n_nochange=6, vocab_bits=SMALL_VOCAB_BITS, seed=7)
    return synth_generate(cfg)


@pytest.fixture(scope="session")
def small_vocab(small_dataset):
    return build_vocabulary(small_dataset.reference + small_dataset.survey, 1 << SMALL_VOCAB_BITS, seed=0)


@pytest.fixture(scope="session")
def small_models(small_dataset, small_vocab):
    return build_place_models(small_dataset.reference, small_dataset.reference_proposals, small_vocab,
                              place_len=3, seed=0)


@pytest.fixture
def small_store(small_models, small_vocab):
    return CompressedMap.from_models(small_models, small_vocab, 3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

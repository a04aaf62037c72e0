"""Shared fixtures and the acceptance-summary hook."""
from __future__ import annotations

import numpy as np
import pytest

from daftir import encoders as enc
from daftir import trainer as tr
from daftir.data import SyntheticSpec, gen_synthetic

# (criterion, passed, detail) rows filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {name}: {detail}")


def unit_rows(rng, n, dim):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """A 120-document synthetic set, small enough for second-scale training."""
    synth = SyntheticSpec(num_docs=120, doc_length=(8, 14), vocab_size=60, query_length=(2, 4),
                         num_val_queries=24, num_test_queries=24, seed=3)
    return gen_synthetic(synth)


@pytest.fixture(scope="session")
def small_vocab(small_dataset):
    texts = list(small_dataset.corpus.values()) + list(small_dataset.train_queries.values())
    return enc.build_vocab(texts, 200)


@pytest.fixture
def small_training_data(small_dataset, small_vocab):
    ds = small_dataset
    return tr.TrainingData.from_texts(ds.corpus, ds.train_queries, ds.train_qrels,
                                      ds.val_queries, ds.val_qrels, small_vocab, 16, 8)


def tiny_model(vocab_size, seed=0, query_kind="tiny_attention", doc_kind="tiny_attention",
               shared_projection=True, out_dim=8):
    qcfg = enc.query_encoder_config(vocab_size, kind=query_kind, hidden_dim=16, num_heads=2,
                                    ff_dim=16, max_seq_len=16, init_std=0.5)
    dcfg = enc.document_encoder_config(vocab_size, kind=doc_kind, hidden_dim=16, num_heads=2,
                                       ff_dim=32, max_seq_len=16, init_std=0.5)
    return tr.DualEncoder.create(qcfg, dcfg, out_dim, seed=seed, shared_projection=shared_projection)


@pytest.fixture
def small_model(small_vocab):
    return tiny_model(len(small_vocab))


def small_train_config(**overrides):
    base = dict(batch_size=8, num_negatives=12, num_epochs=1, warmup_steps=2, learning_rate=3e-3,
                max_align_epochs=2, collapse_window=20)
    base.update(overrides)
    return tr.TrainConfig(**base)

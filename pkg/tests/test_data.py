import filecmp

import pytest

from daftir import data as ds
from daftir.errors import ConfigError, DataFormatError
from daftir.retrieval import evaluate


@pytest.fixture(scope="module")
def reference_set():
    return ds.gen_synthetic(ds.SyntheticSpec(num_docs=2000, queries_per_doc=1, seed=7))


def test_generation_is_byte_identical(tmp_path):
    synth = ds.SyntheticSpec(num_docs=2000, queries_per_doc=1, seed=7)
    a = ds.write_dataset(ds.gen_synthetic(synth), tmp_path / "a")
    b = ds.write_dataset(ds.gen_synthetic(synth), tmp_path / "b")
    for key in ds.DATASET_FILES:
        assert filecmp.cmp(a[key], b[key], shallow=False)


def test_different_seed_differs():
    a = ds.gen_synthetic(ds.SyntheticSpec(num_docs=50, seed=1))
    b = ds.gen_synthetic(ds.SyntheticSpec(num_docs=50, seed=2))
    assert a.corpus != b.corpus


def test_sizes_and_one_relevant_document(reference_set):
    assert len(reference_set.corpus) == 2000 and len(reference_set.train_queries) == 2000
    assert len(reference_set.val_queries) == 200 and len(reference_set.test_queries) == 200
    for qrels in (reference_set.train_qrels, reference_set.val_qrels, reference_set.test_qrels):
        assert all(len(j) == 1 and list(j.values()) == [1] for j in qrels.values())
        assert all(d in reference_set.corpus for j in qrels.values() for d in j)


def test_lengths_within_ranges(reference_set):
    synth = ds.SyntheticSpec()
    assert all(synth.doc_length[0] <= len(t.split()) <= synth.doc_length[1] for t in reference_set.corpus.values())
    assert all(synth.query_length[0] <= len(t.split()) <= synth.query_length[1]
               for t in reference_set.val_queries.values())


def test_lexical_overlap_learnable(reference_set):
    run = ds.lexical_overlap_run(reference_set.val_queries, reference_set.corpus, 10)
    assert evaluate(run, reference_set.val_qrels, (10,))["MRR@10"] >= 0.5


@pytest.mark.parametrize("kwargs", [
    {"vocab_size": 9},
    {"num_docs": 0},
    {"doc_length": (5, 4)},
    {"query_length": (3, 30)},
    {"distractor_rate": 1.0},
])
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        ds.SyntheticSpec(**kwargs)


def test_dataset_round_trip(tmp_path):
    original = ds.gen_synthetic(ds.SyntheticSpec(num_docs=30, num_val_queries=5, num_test_queries=5, seed=1))
    back = ds.read_dataset(ds.write_dataset(original, tmp_path))
    assert back == original


@pytest.mark.parametrize("body,line", [
    ("a\tx\nb x\n", 2),
    ("a\tx\n\tempty id\n", 2),
    ("a\tx\na\ty\n", 2),
    ("a\tx\tz\n", 1),
])
def test_malformed_tsv_reports_line(tmp_path, body, line):
    path = tmp_path / "bad.tsv"
    path.write_text(body)
    with pytest.raises(DataFormatError) as err:
        ds.read_tsv(path)
    assert err.value.lineno == line and str(err.value).startswith(f"{path}:{line}:")


def test_write_tsv_rejects_tabs(tmp_path):
    with pytest.raises(ValueError):
        ds.write_tsv({"a": "x\ty"}, tmp_path / "t.tsv")

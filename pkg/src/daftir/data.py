"""Synthetic retrieval corpora and TSV/TREC dataset files.

Documents are random token sequences over a Zipf-distributed vocabulary.
Each query copies a few of its source document's more informative (rarer)
tokens and mixes in distractor tokens; the source document is its single
relevant document.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataFormatError
from .retrieval import read_qrels, write_qrels

DATASET_FILES = {
    "corpus": "corpus.tsv",
    "train_queries": "train_queries.tsv",
    "train_qrels": "train_qrels.txt",
    "val_queries": "val_queries.tsv",
    "val_qrels": "val_qrels.txt",
    "test_queries": "test_queries.tsv",
    "test_qrels": "test_qrels.txt",
}


@dataclass(frozen=True)
class SyntheticSpec:
    num_docs: int = 2000
    doc_length: tuple = (20, 40)
    vocab_size: int = 1000
    queries_per_doc: int = 1
    query_length: tuple = (3, 6)
    distractor_rate: float = 0.2
    num_val_queries: int = 200
    num_test_queries: int = 200
    zipf_exponent: float = 1.0
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "doc_length", tuple(self.doc_length))
        object.__setattr__(self, "query_length", tuple(self.query_length))
        if self.vocab_size < 10:
            raise ConfigError("vocab_size must be >= 10")
        if self.num_docs < 1:
            raise ConfigError("num_docs must be >= 1")
        lo, hi = self.doc_length
        qlo, qhi = self.query_length
        if not (1 <= lo <= hi and 1 <= qlo <= qhi):
            raise ConfigError("length ranges must satisfy 1 <= min <= max")
        if qhi > lo:
            raise ConfigError("query_length max must not exceed doc_length min")
        if not 0.0 <= self.distractor_rate < 1.0:
            raise ConfigError("distractor_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    corpus: dict  # doc_id -> text
    train_queries: dict
    train_qrels: dict
    val_queries: dict
    val_qrels: dict
    test_queries: dict = field(default_factory=dict)
    test_qrels: dict = field(default_factory=dict)


def _word(i: int, width: int) -> str:
    return f"w{i:0{width}d}"


def gen_synthetic(synth: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(synth.seed)
    width = len(str(synth.vocab_size - 1))
    ranks = np.arange(1, synth.vocab_size + 1, dtype=np.float64)
    probs = ranks ** -synth.zipf_exponent
    probs /= probs.sum()
    info = -np.log(probs)

    doc_tokens = []
    for _ in range(synth.num_docs):
        length = int(rng.integers(synth.doc_length[0], synth.doc_length[1] + 1))
        doc_tokens.append(rng.choice(synth.vocab_size, size=length, p=probs))

    def make_query(doc: np.ndarray) -> str:
        length = int(rng.integers(synth.query_length[0], synth.query_length[1] + 1))
        distinct = np.unique(doc)
        # the rarer half of the document's distinct tokens carries its identity
        pool = distinct[np.argsort(-info[distinct], kind="stable")][: max(length, distinct.size // 2)]
        take = min(length, pool.size)
        salient = list(rng.choice(pool, size=take, replace=False))
        words = []
        for tok in salient:
            if rng.random() < synth.distractor_rate:
                tok = int(rng.choice(synth.vocab_size, p=probs))
            words.append(_word(int(tok), width))
        return " ".join(words)

    doc_ids = [f"D{i}" for i in range(synth.num_docs)]
    corpus = {did: " ".join(_word(int(t), width) for t in toks)
              for did, toks in zip(doc_ids, doc_tokens)}

    def make_split(prefix, sources):
        queries, qrels = {}, {}
        for j, src in enumerate(sources):
            qid = f"{prefix}{j}"
            queries[qid] = make_query(doc_tokens[src])
            qrels[qid] = {doc_ids[src]: 1}
        return queries, qrels

    train_src = np.repeat(np.arange(synth.num_docs), synth.queries_per_doc)
    train_q, train_r = make_split("TQ", train_src)
    val_q, val_r = make_split("VQ", rng.integers(0, synth.num_docs, synth.num_val_queries))
    test_q, test_r = make_split("EQ", rng.integers(0, synth.num_docs, synth.num_test_queries))
    return Dataset(corpus, train_q, train_r, val_q, val_r, test_q, test_r)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def read_tsv(path) -> dict[str, str]:
    """``id<TAB>text`` records; malformed lines raise with their line number."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise DataFormatError(path, lineno, "expected 'id<TAB>text'")
            if parts[0] in out:
                raise DataFormatError(path, lineno, f"duplicate id {parts[0]!r}")
            out[parts[0]] = parts[1]
    return out


def write_tsv(records: Mapping[str, str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rid, text in records.items():
            if "\t" in text or "\n" in text:
                raise ValueError(f"record {rid!r} contains a tab or newline")
            fh.write(f"{rid}\t{text}\n")


def write_dataset(ds: Dataset, out_dir) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: str(out / v) for k, v in DATASET_FILES.items()}
    write_tsv(ds.corpus, paths["corpus"])
    write_tsv(ds.train_queries, paths["train_queries"])
    write_qrels(ds.train_qrels, paths["train_qrels"])
    write_tsv(ds.val_queries, paths["val_queries"])
    write_qrels(ds.val_qrels, paths["val_qrels"])
    write_tsv(ds.test_queries, paths["test_queries"])
    write_qrels(ds.test_qrels, paths["test_qrels"])
    return paths


def read_dataset(paths: Mapping[str, str]) -> Dataset:
    def opt(key, reader):
        p = paths.get(key)
        return reader(p) if p else {}

    return Dataset(
        corpus=read_tsv(paths["corpus"]),
        train_queries=read_tsv(paths["train_queries"]),
        train_qrels=read_qrels(paths["train_qrels"]),
        val_queries=read_tsv(paths["val_queries"]),
        val_qrels=read_qrels(paths["val_qrels"]),
        test_queries=opt("test_queries", read_tsv),
        test_qrels=opt("test_qrels", read_qrels),
    )


def lexical_overlap_run(queries: Mapping[str, str], corpus: Mapping[str, str], k: int = 10):
    """Rank documents by the number of distinct words shared with the query."""
    from .encoders import split_words
    from .kernels import topk_order_numpy
    from .retrieval import id_sort_key

    doc_ids = list(corpus)
    vocab: dict[str, int] = {}
    doc_sets = [{vocab.setdefault(w, len(vocab)) for w in split_words(corpus[d])} for d in doc_ids]
    incidence = np.zeros((len(doc_ids), len(vocab)))
    for i, s in enumerate(doc_sets):
        incidence[i, list(s)] = 1.0
    tie = id_sort_key(doc_ids)
    run = {}
    for qid, text in queries.items():
        q = np.zeros(len(vocab))
        for w in set(split_words(text)):
            if w in vocab:
                q[vocab[w]] = 1.0
        scores = incidence @ q
        order = topk_order_numpy(scores[None, :], tie, k)[0]
        run[qid] = [(doc_ids[j], float(scores[j])) for j in order]
    return run

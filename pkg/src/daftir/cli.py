"""Command-line entry point: ``daftir <subcommand> [options]``.

Subcommands::

    gen-data     write a synthetic corpus, queries and qrels
    build-vocab  build vocab.tsv from a dataset directory
    train        train a dual encoder (--mode daft | no_alignment | alternating)
    index        encode a corpus into index.bin with a checkpoint's document encoder
    retrieve     search an index with a checkpoint's query encoder, write run.trec
    evaluate     score a TREC run against qrels, write metrics.json
    diagnose     collapse report and PCA coordinates for a checkpoint

Every subcommand writes into ``--output``. Failures print one ``error:`` line
(with file and line number for malformed input) and exit with status 1.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

from . import _accel
from . import data as ds
from . import encoders as enc
from . import trainer as tr
from .diagnostics import collapse_report, write_pca_csv
from .errors import ConfigError, DaftError
from .retrieval import (DenseIndex, evaluate, random_mrr_baseline, rank_documents_maxp_batch,
                        read_qrels, read_run, search_topk_batch, write_run)

log = logging.getLogger("daftir")

DEFAULT_CUTOFFS = (10, 100)
DEFAULT_K = 100


def _encoder_defaults(factory) -> dict:
    d = factory(len(enc.SPECIAL_TOKENS) + 1).to_dict()
    d.pop("vocab_size")
    return d


def default_config() -> dict:
    """The fully defaulted experiment configuration."""
    return {
        "seed": 0,
        "data": {"dir": None, **{key: None for key in ds.DATASET_FILES}},
        "synthetic": ds.SyntheticSpec().to_dict(),
        "vocab": {"max_size": 5000, "path": None},
        "query_encoder": _encoder_defaults(enc.query_encoder_config),
        "doc_encoder": _encoder_defaults(enc.document_encoder_config),
        "out_dim": 32,
        "query_max_len": 64,
        "doc_max_len": 64,
        "train": tr.TrainConfig().to_dict(),
    }


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return _merge(cfg, user, "")


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(path) -> str:
    if path is None or not os.path.isfile(path):
        raise ConfigError(f"missing input file: {path}")
    return str(path)


def dataset_paths(cfg: dict, data_dir: str | None, needed) -> dict:
    """Resolve dataset file paths from ``--data``, ``data.dir`` and per-file overrides."""
    base = data_dir or cfg["data"]["dir"]
    paths = {}
    for key, name in ds.DATASET_FILES.items():
        explicit = cfg["data"].get(key)
        if explicit:
            paths[key] = explicit
        elif base:
            paths[key] = os.path.join(base, name)
    for key in needed:
        paths[key] = _require(paths.get(key))
    return {k: v for k, v in paths.items() if os.path.isfile(v)}


def _output_dir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_vocab(args, cfg, checkpoint_path: str | None = None) -> enc.Vocabulary:
    path = getattr(args, "vocab", None) or cfg["vocab"]["path"]
    if path is None and checkpoint_path is not None:
        path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "vocab.tsv")
    return enc.Vocabulary.load(_require(path))


def _split_texts(paths: dict, prefix: str):
    queries = ds.read_tsv(paths[f"{prefix}_queries"])
    qrels = read_qrels(paths[f"{prefix}_qrels"])
    return queries, qrels


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args, cfg) -> None:
    if args.seed is not None:
        cfg["synthetic"]["seed"] = args.seed
    synth = ds.SyntheticSpec(**cfg["synthetic"])
    out = _output_dir(args)
    ds.write_dataset(ds.gen_synthetic(synth), out)
    _dump_json(cfg, out / "effective_config.json")


def cmd_build_vocab(args, cfg) -> None:
    paths = dataset_paths(cfg, args.data, ("corpus", "train_queries"))
    texts = list(ds.read_tsv(paths["corpus"]).values()) + list(ds.read_tsv(paths["train_queries"]).values())
    enc.build_vocab(texts, cfg["vocab"]["max_size"]).save(_output_dir(args) / "vocab.tsv")


def _pca_sample(model: tr.DualEncoder, data: tr.TrainingData):
    """Validation queries and their relevant documents, encoded by their own towers."""
    pos_of = {d: i for i, d in enumerate(data.doc_ids)}
    doc_tokens = [data.doc_tokens[pos_of[d]] for q in data.val_ids
                  for d, rel in data.val_qrels[q].items() if rel >= 1 and d in pos_of]
    return model.encode_queries(data.val_tokens), model.encode_docs(doc_tokens)


def _collapse_json(q_vecs, d_vecs) -> dict:
    return {"queries": collapse_report(q_vecs).to_dict(), "documents": collapse_report(d_vecs).to_dict()}


def cmd_train(args, cfg) -> None:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.mode is not None:
        cfg["train"]["mode"] = args.mode
    cfg["train"]["seed"] = cfg["seed"]
    train_cfg = tr.TrainConfig.from_dict(cfg["train"])
    paths = dataset_paths(cfg, args.data, ("corpus", "train_queries", "train_qrels", "val_queries", "val_qrels"))
    out = _output_dir(args)

    corpus = ds.read_tsv(paths["corpus"])
    train_q = ds.read_tsv(paths["train_queries"])
    train_r = read_qrels(paths["train_qrels"])
    val_q, val_r = _split_texts(paths, "val")
    if getattr(args, "vocab", None) or cfg["vocab"]["path"]:
        vocab = _load_vocab(args, cfg)
    else:
        vocab = enc.build_vocab(list(corpus.values()) + list(train_q.values()), cfg["vocab"]["max_size"])
    vocab.save(out / "vocab.tsv")

    data = tr.TrainingData.from_texts(corpus, train_q, train_r, val_q, val_r, vocab,
                                      cfg["doc_max_len"], cfg["query_max_len"])
    qcfg = enc.EncoderConfig.from_dict({**cfg["query_encoder"], "vocab_size": len(vocab)})
    dcfg = enc.EncoderConfig.from_dict({**cfg["doc_encoder"], "vocab_size": len(vocab)})
    model = tr.DualEncoder.create(qcfg, dcfg, cfg["out_dim"], seed=cfg["seed"],
                                  shared_projection=train_cfg.shared_projection)
    _dump_json(cfg, out / "effective_config.json")

    def snapshot(stage: str, current: tr.DualEncoder) -> None:
        write_pca_csv(*_pca_sample(current, data), out / f"pca_{stage}.csv")

    result = tr.daft_train(data, train_cfg, model, on_stage_end=snapshot)
    result.best.save(out / "checkpoint_best.bin")
    result.last.save(out / "checkpoint_last.bin")
    tr.write_train_log(result.log_rows, out / "train_log.csv")
    if train_cfg.mode == "daft":
        from .alignment import write_alignment_csv
        write_alignment_csv(result.alignment_history, out / "alignment.csv")

    best = result.best.model
    q_vecs, d_vecs = _pca_sample(best, data)
    write_pca_csv(q_vecs, d_vecs, out / "pca_final.csv")
    _dump_json(_collapse_json(q_vecs, d_vecs), out / "collapse_report.json")

    split = "test" if "test_queries" in paths and "test_qrels" in paths else "val"
    queries, qrels = _split_texts(paths, split)
    qids = [q for q in queries if q in qrels]
    tokens = [enc.tokenize(queries[q], vocab, cfg["query_max_len"]) for q in qids]
    rankings = tr.retrieve(best, data, tokens, args.k)
    run = dict(zip(qids, rankings))
    write_run(run, out / "run.trec")
    metrics = evaluate(run, qrels, args.metric_cutoffs)
    _dump_json({
        "split": split,
        "num_queries": len(qids),
        "metrics": metrics,
        "random_mrr_baseline": {f"MRR@{c}": random_mrr_baseline(data.num_docs, c) for c in args.metric_cutoffs},
        "mode": train_cfg.mode,
        "align_decision": result.align_decision,
        "collapsed": result.collapsed,
        "best_epoch": result.best.epoch,
        "best_validation_ndcg": result.best.validation_score,
        "steps": len(result.log_rows),
    }, out / "metrics.json")


def cmd_index(args, cfg) -> None:
    ckpt = tr.Checkpoint.load(_require(args.checkpoint))
    vocab = _load_vocab(args, cfg, args.checkpoint)
    paths = dataset_paths(cfg, args.data, ("corpus",))
    corpus = ds.read_tsv(paths["corpus"])
    ids = list(corpus)
    tokens = [enc.tokenize(corpus[d], vocab, cfg["doc_max_len"]) for d in ids]
    DenseIndex(ids, ckpt.model.encode_docs(tokens)).save(_output_dir(args) / "index.bin")


def cmd_retrieve(args, cfg) -> None:
    ckpt = tr.Checkpoint.load(_require(args.checkpoint))
    vocab = _load_vocab(args, cfg, args.checkpoint)
    index = DenseIndex.load(_require(args.index))
    if args.queries:
        queries = ds.read_tsv(_require(args.queries))
    else:
        paths = dataset_paths(cfg, args.data, ())
        key = "test_queries" if "test_queries" in paths else "val_queries"
        queries = ds.read_tsv(_require(paths.get(key)))
    qids = list(queries)
    q_vecs = ckpt.model.encode_queries([enc.tokenize(queries[q], vocab, cfg["query_max_len"]) for q in qids])
    search = rank_documents_maxp_batch if index.doc_of is not None else search_topk_batch
    write_run(dict(zip(qids, search(index, q_vecs, args.k))), _output_dir(args) / "run.trec")


def cmd_evaluate(args, cfg) -> None:
    run = read_run(_require(args.run))
    if args.qrels:
        qrels = read_qrels(_require(args.qrels))
    else:
        paths = dataset_paths(cfg, args.data, ())
        key = "test_qrels" if "test_qrels" in paths else "val_qrels"
        qrels = read_qrels(_require(paths.get(key)))
    metrics, table = evaluate(run, qrels, args.metric_cutoffs, per_query=True)
    _dump_json({"num_queries": len(table), "metrics": metrics}, _output_dir(args) / "metrics.json")
    for name in sorted(metrics):
        print(f"{name}\t{metrics[name]:.6f}")


def cmd_diagnose(args, cfg) -> None:
    ckpt = tr.Checkpoint.load(_require(args.checkpoint))
    vocab = _load_vocab(args, cfg, args.checkpoint)
    paths = dataset_paths(cfg, args.data, ("corpus", "val_queries", "val_qrels"))
    corpus = ds.read_tsv(paths["corpus"])
    val_q, val_r = _split_texts(paths, "val")
    data = tr.TrainingData.from_texts(corpus, {}, {}, val_q, val_r, vocab, cfg["doc_max_len"],
                                      cfg["query_max_len"], require_train=False)
    q_vecs, d_vecs = _pca_sample(ckpt.model, data)
    out = _output_dir(args)
    _dump_json(_collapse_json(q_vecs, d_vecs), out / "collapse_report.json")
    write_pca_csv(q_vecs, d_vecs, out / f"pca_{ckpt.stage}.csv")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _cutoffs(text: str) -> tuple:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("cutoffs must be positive integers")
    return values


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daftir", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name, func, help_text, data=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config JSON (missing keys take defaults)")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        if data:
            p.add_argument("--data", help="dataset directory (overrides data.dir)")
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "write a synthetic dataset", data=False)
    add("build-vocab", cmd_build_vocab, "build vocab.tsv from the corpus and training queries")

    p = add("train", cmd_train, "train a dual encoder")
    p.add_argument("--mode", choices=tr.MODES, help="training mode (default from config)")
    p.add_argument("--vocab", help="existing vocab.tsv (default: build one)")
    p.add_argument("--k", type=_positive, default=DEFAULT_K, help="retrieval depth for the final run")
    p.add_argument("--metric-cutoffs", type=_cutoffs, default=DEFAULT_CUTOFFS, help="e.g. 10,100")

    p = add("index", cmd_index, "build index.bin from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocab.tsv (default: next to the checkpoint)")

    p = add("retrieve", cmd_retrieve, "write run.trec for a query file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", help="query TSV (default: the dataset's test or validation queries)")
    p.add_argument("--vocab", help="vocab.tsv (default: next to the checkpoint)")
    p.add_argument("--k", type=_positive, default=DEFAULT_K, help="retrieval depth")

    p = add("evaluate", cmd_evaluate, "score a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", help="qrels file (default: the dataset's test or validation qrels)")
    p.add_argument("--metric-cutoffs", type=_cutoffs, default=DEFAULT_CUTOFFS, help="e.g. 10,100,1000")

    p = add("diagnose", cmd_diagnose, "collapse report and PCA CSV for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocab.tsv (default: next to the checkpoint)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    _accel.configure_threads()
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (DaftError, ValueError, OSError, KeyError, TypeError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"daftir {args.command}: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

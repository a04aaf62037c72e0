"""Two-stage training of heterogeneous dual-encoders.

Stage 1 (alignment) trains only the query encoder against a frozen document
encoder until the k-NN KL estimate between their outputs on validation
queries drops below a threshold or stops improving. Stage 2 (fine-tuning)
trains both encoders for a fixed number of epochs and keeps the epoch with
the best validation nDCG@10. ``no_alignment`` skips stage 1, and
``alternating`` replaces both stages with per-batch alternation between
query-side and document-side updates.
"""
from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import encoders as enc
from . import sampling
from .alignment import Decision, ann_validation_score, EarlyStopState, kl_knn_details, should_stop
from .container import read_container, write_container
from .diagnostics import total_variance
from .encoders import EncoderConfig, Vocabulary
from .errors import ConfigError
from .numerics import GradientTape, Tensor
from .objective import LossConfig, collapse_loss, shared_negative_loss
from .retrieval import DenseIndex, evaluate, search_topk_batch

log = logging.getLogger(__name__)

MODES = ("daft", "no_alignment", "alternating")
UPDATE_SETS = ("query_only", "both", "doc_only")
CHECKPOINT_VERSION = 1
# Alignment threshold reported for 512-d encoders on MS MARCO. It does not
# transfer across output sizes or corpora.
PUBLISHED_KL_THRESHOLD = 250.0
# alignment.knee_threshold on the reference synthetic run (seed 0), rounded.
SYNTHETIC_KL_THRESHOLD = 23.0


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    batch_size: int = 16
    num_negatives: int = 64
    temperature: float = 1.0
    score_scale: float = 20.0
    num_epochs: int = 10
    kl_threshold: float = SYNTHETIC_KL_THRESHOLD
    patience: int = 3
    max_align_epochs: int = 50
    kl_k: int = 1
    align_on: str = "queries"
    cache_fraction: float = 1.0
    refresh_fraction: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rewarm_each_stage: bool = True
    eval_cutoff: int = 10
    collapse_window: int = 200
    collapse_tolerance: float = 0.05
    collapse_variance: float = 1e-6
    seed: int = 0
    mode: str = "daft"
    shared_projection: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.align_on not in ("queries", "documents"):
            raise ConfigError("align_on must be 'queries' or 'documents'")
        if self.batch_size < 1 or self.num_negatives < 1 or self.num_epochs < 0:
            raise ConfigError("batch_size and num_negatives must be >= 1, num_epochs >= 0")
        if self.learning_rate < 0 or self.warmup_steps < 0 or self.patience < 1:
            raise ConfigError("learning_rate and warmup_steps must be >= 0, patience >= 1")
        if not (0 < self.cache_fraction <= 1 and 0 < self.refresh_fraction <= 1):
            raise ConfigError("cache_fraction and refresh_fraction must be in (0, 1]")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.temperature, self.score_scale, self.num_negatives)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``learning_rate`` over ``warmup_steps``, then constant."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if cfg.warmup_steps == 0 or step >= cfg.warmup_steps:
        return cfg.learning_rate
    return cfg.learning_rate * step / cfg.warmup_steps


# ---------------------------------------------------------------------------
# model and optimizer
# ---------------------------------------------------------------------------


@dataclass
class DualEncoder:
    query_config: EncoderConfig
    doc_config: EncoderConfig
    query_params: dict
    doc_params: dict
    query_proj: dict
    doc_proj: dict
    shared_projection: bool = True

    @classmethod
    def create(cls, query_config: EncoderConfig, doc_config: EncoderConfig, out_dim: int = 32,
               seed: int = 0, shared_projection: bool = True) -> "DualEncoder":
        if query_config.hidden_dim != doc_config.hidden_dim and shared_projection:
            raise ConfigError("a shared projection needs equal hidden_dim on both encoders")
        s_q, s_d, s_pq, s_pd = np.random.SeedSequence(seed).generate_state(4)
        q_proj = enc.init_projection(query_config.hidden_dim, out_dim, int(s_pq))
        d_proj = q_proj if shared_projection else enc.init_projection(doc_config.hidden_dim, out_dim, int(s_pd))
        return cls(query_config, doc_config,
                   enc.init_params(query_config, int(s_q)), enc.init_params(doc_config, int(s_d)),
                   q_proj, d_proj, shared_projection)

    @property
    def out_dim(self) -> int:
        return self.query_proj["w"].shape[0]

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {f"query.{k}": v for k, v in self.query_params.items()}
        out.update({f"doc.{k}": v for k, v in self.doc_params.items()})
        if self.shared_projection:
            out.update({f"proj.{k}": v for k, v in self.query_proj.items()})
        else:
            out.update({f"query_proj.{k}": v for k, v in self.query_proj.items()})
            out.update({f"doc_proj.{k}": v for k, v in self.doc_proj.items()})
        return out

    def trainable(self, update_set: str) -> list[str]:
        """Parameter names updated under ``update_set``.

        The document side owns the shared projection, so ``query_only`` leaves
        every input of the document encoder untouched.
        """
        if update_set not in UPDATE_SETS:
            raise ValueError(f"unknown update_set {update_set!r}")
        names = list(self.named_parameters())
        query_side = [n for n in names if n.startswith(("query.", "query_proj."))]
        doc_side = [n for n in names if n.startswith(("doc.", "doc_proj.", "proj."))]
        return {"query_only": query_side, "doc_only": doc_side, "both": query_side + doc_side}[update_set]

    def doc_fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.named_parameters().items()):
            if name.startswith(("doc.", "doc_proj.", "proj.")):
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def encode_queries(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        return enc.encode_many(self.query_params, self.query_proj, self.query_config, seqs)

    def encode_docs(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        return enc.encode_many(self.doc_params, self.doc_proj, self.doc_config, seqs)

    def copy(self) -> "DualEncoder":
        return copy.deepcopy(self)


@dataclass
class AdamW:
    """Adam with decoupled weight decay. Moments and step counts are per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class TrainingData:
    """Tokenized training material. Documents are addressed by corpus position."""

    doc_ids: list
    doc_tokens: list
    train_tokens: list
    train_pos: np.ndarray
    val_ids: list
    val_tokens: list
    val_qrels: dict

    @classmethod
    def from_texts(cls, corpus: Mapping[str, str], train_queries: Mapping[str, str], train_qrels,
                   val_queries: Mapping[str, str], val_qrels, vocab: Vocabulary,
                   doc_max_len: int = 64, query_max_len: int = 64,
                   require_train: bool = True) -> "TrainingData":
        doc_ids = list(corpus)
        pos_of = {d: i for i, d in enumerate(doc_ids)}
        doc_tokens = [enc.tokenize(corpus[d], vocab, doc_max_len) for d in doc_ids]
        train_tokens, train_pos = [], []
        for qid, text in train_queries.items():
            toks = enc.tokenize(text, vocab, query_max_len)
            for did, rel in train_qrels.get(qid, {}).items():
                if rel >= 1 and did in pos_of:
                    train_tokens.append(toks)
                    train_pos.append(pos_of[did])
        if require_train and not train_tokens:
            raise ValueError("no (query, relevant document) training pairs")
        val_ids = [q for q in val_queries if q in val_qrels]
        val_tokens = [enc.tokenize(val_queries[q], vocab, query_max_len) for q in val_ids]
        return cls(doc_ids, doc_tokens, train_tokens, np.asarray(train_pos, dtype=np.int64),
                   val_ids, val_tokens, {q: val_qrels[q] for q in val_ids})

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)


def _doc_encoder_fn(model: DualEncoder, data: TrainingData):
    return lambda positions: model.encode_docs([data.doc_tokens[p] for p in positions])


# ---------------------------------------------------------------------------
# collapse detector
# ---------------------------------------------------------------------------


@dataclass
class CollapseDetector:
    """Flags a run whose loss sits at the all-scores-equal value with no spread.

    Fires once ``window`` consecutive steps have loss within ``tolerance`` of
    ``ln(num_negatives + 1)`` and batch-representation variance below
    ``variance_floor``. The flag is sticky.
    """

    num_negatives: int
    window: int = 200
    tolerance: float = 0.05
    variance_floor: float = 1e-6
    run_length: int = 0
    collapsed: bool = False

    def update(self, loss: float, rep_variance: float) -> bool:
        near = abs(loss - collapse_loss(self.num_negatives)) <= self.tolerance
        if near and rep_variance < self.variance_floor:
            self.run_length += 1
        else:
            self.run_length = 0
        if self.run_length >= self.window:
            self.collapsed = True
        return self.collapsed


# ---------------------------------------------------------------------------
# training state
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    model: DualEncoder
    data: TrainingData
    cfg: TrainConfig
    optimizer: AdamW
    rng: np.random.Generator
    cache_rng: np.random.Generator
    detector: CollapseDetector
    cache: sampling.NegativeCache | None = None
    global_step: int = 0
    align_steps: int = 0
    log_rows: list = field(default_factory=list)
    alignment_history: list = field(default_factory=list)
    stage_decision: str | None = None

    @classmethod
    def create(cls, model: DualEncoder, data: TrainingData, cfg: TrainConfig) -> "TrainState":
        s_batch, s_cache = np.random.SeedSequence(cfg.seed).spawn(2)
        return cls(model=model, data=data, cfg=cfg,
                   optimizer=AdamW(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay),
                   rng=np.random.default_rng(s_batch), cache_rng=np.random.default_rng(s_cache),
                   detector=CollapseDetector(cfg.num_negatives, cfg.collapse_window,
                                             cfg.collapse_tolerance, cfg.collapse_variance))

    def reset_cache(self) -> None:
        self.cache = sampling.init_cache(list(range(self.data.num_docs)), _doc_encoder_fn(self.model, self.data),
                                         self.cfg.cache_fraction, self.cfg.refresh_fraction, self.cache_rng)


@dataclass(frozen=True)
class StepResult:
    loss: float
    rep_variance: float


def in_batch_negative_mask(pos_positions, num_negatives: int):
    """Which in-batch positives serve as negatives for each row, and how many pooled ones to add.

    Row ``i`` uses the positives of the other rows that point at a different
    document, at most ``num_negatives`` of them in batch order; the remainder
    up to ``num_negatives`` comes from the shared pool. Returns
    ``(mask (B, B), pool_counts (B,))``.
    """
    pos_positions = np.asarray(pos_positions)
    mask = pos_positions[None, :] != pos_positions[:, None]
    mask &= np.cumsum(mask, axis=1) <= num_negatives
    return mask, num_negatives - mask.sum(axis=1)


def train_step(state: TrainState, batch: Sequence[int], update_set: str, lr: float) -> StepResult:
    """One optimizer update on the training pairs at positions ``batch``.

    Encodes the batch and assembles ``num_negatives`` negatives per query:
    the other in-batch positives, then a pool of cache entries chosen by
    per-query Gumbel sampling (:func:`sampling.sample_shared_pool`) and
    re-encoded with gradient. Computes the mean contrastive loss, updates
    only the parameters in ``update_set`` and, when the document side
    changed, refreshes a fraction of the cache.
    Returns the pre-update loss.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if state.cache is None:
        raise RuntimeError("negative cache not initialized")
    model, data, cfg = state.model, state.data, state.cfg
    named = model.named_parameters()
    update = set(model.trainable(update_set))
    tensors = {name: Tensor(arr, requires_grad=name in update) for name, arr in named.items()}

    def group(prefix):
        return {n[len(prefix):]: t for n, t in tensors.items() if n.startswith(prefix)}

    q_params, d_params = group("query."), group("doc.")
    if model.shared_projection:
        q_proj = d_proj = group("proj.")
    else:
        q_proj, d_proj = group("query_proj."), group("doc_proj.")

    q_ids = enc.pad_batch([data.train_tokens[i] for i in batch], model.query_config.max_seq_len)
    pos_positions = data.train_pos[list(batch)]

    in_batch, n_pool = in_batch_negative_mask(pos_positions, cfg.num_negatives)
    with GradientTape() as tape:
        q = enc.encode_ids(q_params, q_proj, model.query_config, q_ids)
        pool_positions = sampling.sample_shared_pool(
            state.cache, q.data, int(n_pool.max()), [int(p) for p in pos_positions],
            cfg.loss_config.logit_factor)
        d_ids = enc.pad_batch([data.doc_tokens[p] for p in np.concatenate([pos_positions, pool_positions])],
                              model.doc_config.max_seq_len)
        docs = enc.encode_ids(d_params, d_proj, model.doc_config, d_ids)
        pos, pool = docs[: len(batch)], docs[len(batch):]
        pool_valid = np.arange(len(pool_positions))[None, :] < n_pool[:, None]
        loss = shared_negative_loss(q, pos, pool, in_batch, pool_valid, cfg.loss_config)

    names = [n for n in named if n in update]
    grads = tape.gradient(loss, [tensors[n] for n in names])
    state.optimizer.step(named, dict(zip(names, grads)), lr)
    if any(n.startswith(("doc.", "doc_proj.", "proj.")) for n in names):
        sampling.refresh(state.cache, _doc_encoder_fn(model, data))
    return StepResult(loss.item(), total_variance(np.vstack([q.data, pos.data])))


def _run_epoch(state: TrainState, stage: str, update_sets: Sequence[str], stage_step: int) -> int:
    cfg = state.cfg
    order = state.rng.permutation(len(state.data.train_tokens))
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        batch = order[start:start + cfg.batch_size]
        lr = lr_at(stage_step, cfg)
        result = train_step(state, batch, update_sets[b % len(update_sets)], lr)
        state.global_step += 1
        stage_step += 1
        collapsed = state.detector.update(result.loss, result.rep_variance)
        state.log_rows.append({"step": state.global_step, "stage": stage, "loss": result.loss,
                               "lr": lr, "kl_estimate": None, "collapsed": collapsed})
    return stage_step


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def alignment_sample(model: DualEncoder, data: TrainingData, align_on: str = "queries"):
    """(document-encoder outputs, query-encoder outputs) on validation inputs.

    ``align_on="documents"`` feeds the validation queries' relevant documents
    to the document encoder instead of the queries themselves.
    """
    x_prime = model.encode_queries(data.val_tokens)
    if align_on == "queries":
        doc_inputs = [toks[: model.doc_config.max_seq_len] for toks in data.val_tokens]
    else:
        pos_of = {d: i for i, d in enumerate(data.doc_ids)}
        doc_inputs = []
        for qid in data.val_ids:
            for did, rel in data.val_qrels[qid].items():
                if rel >= 1 and did in pos_of:
                    doc_inputs.append(data.doc_tokens[pos_of[did]])
    return model.encode_docs(doc_inputs), x_prime


def validation_kl(model: DualEncoder, data: TrainingData, cfg: TrainConfig):
    x, x_prime = alignment_sample(model, data, cfg.align_on)
    return kl_knn_details(x, x_prime, cfg.kl_k)


def retrieve(model: DualEncoder, data: TrainingData, query_tokens, k: int, index: DenseIndex | None = None):
    if index is None:
        index = DenseIndex(list(data.doc_ids), model.encode_docs(data.doc_tokens))
    return search_topk_batch(index, model.encode_queries(query_tokens), k)


def validation_ndcg(model: DualEncoder, data: TrainingData, k: int = 10) -> float:
    """Fresh index with the current document encoder, nDCG@k of the validation queries."""
    return ann_validation_score(model.encode_queries, model.encode_docs,
                                dict(zip(data.val_ids, data.val_tokens)),
                                dict(zip(data.doc_ids, data.doc_tokens)), data.val_qrels, k)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: DualEncoder
    optimizer: AdamW
    epoch: int
    stage: str
    validation_score: float | None
    rng_state: dict
    cache_rng_state: dict
    train_config: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def capture(cls, state: TrainState, epoch: int, stage: str, score: float | None) -> "Checkpoint":
        return cls(model=state.model.copy(), optimizer=copy.deepcopy(state.optimizer), epoch=epoch,
                   stage=stage, validation_score=score,
                   rng_state=copy.deepcopy(state.rng.bit_generator.state),
                   cache_rng_state=copy.deepcopy(state.cache_rng.bit_generator.state),
                   train_config=state.cfg.to_dict())

    def save(self, path) -> None:
        m = self.model
        arrays = {f"param/{k}": v for k, v in m.named_parameters().items()}
        for k in sorted(self.optimizer.m):
            arrays[f"adam_m/{k}"] = self.optimizer.m[k]
            arrays[f"adam_v/{k}"] = self.optimizer.v[k]
        meta = {
            "epoch": self.epoch,
            "stage": self.stage,
            "validation_score": self.validation_score,
            "query_config": m.query_config.to_dict(),
            "doc_config": m.doc_config.to_dict(),
            "shared_projection": m.shared_projection,
            "out_dim": m.out_dim,
            "optimizer": {"beta1": self.optimizer.beta1, "beta2": self.optimizer.beta2,
                          "eps": self.optimizer.eps, "weight_decay": self.optimizer.weight_decay,
                          "t": dict(sorted(self.optimizer.t.items()))},
            "rng_state": self.rng_state,
            "cache_rng_state": self.cache_rng_state,
            "train_config": self.train_config,
        }
        write_container(path, "checkpoint", self.version, meta, arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        manifest, arrays = read_container(path, "checkpoint")
        meta = manifest["meta"]
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        shared = meta["shared_projection"]

        def take(prefix):
            return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}

        q_proj = take("proj.") if shared else take("query_proj.")
        d_proj = q_proj if shared else take("doc_proj.")
        model = DualEncoder(EncoderConfig.from_dict(meta["query_config"]),
                            EncoderConfig.from_dict(meta["doc_config"]),
                            take("query."), take("doc."), q_proj, d_proj, shared)
        o = meta["optimizer"]
        opt = AdamW(o["beta1"], o["beta2"], o["eps"], o["weight_decay"],
                    m={k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")},
                    v={k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")},
                    t=dict(o["t"]))
        return cls(model=model, optimizer=opt, epoch=meta["epoch"], stage=meta["stage"],
                   validation_score=meta["validation_score"], rng_state=meta["rng_state"],
                   cache_rng_state=meta["cache_rng_state"], train_config=meta["train_config"],
                   version=manifest["version"])


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def align_stage(state: TrainState) -> Decision:
    """Train the query encoder only, checking alignment before every epoch."""
    cfg = state.cfg
    stop = EarlyStopState(threshold=cfg.kl_threshold, patience=cfg.patience)
    state.reset_cache()
    stage_step = 0
    epoch = 0
    while True:
        est = validation_kl(state.model, state.data, cfg)
        decision = should_stop(stop, est.value)
        if decision is Decision.CONTINUE and epoch >= cfg.max_align_epochs:
            decision = Decision.STOP_MAX_EPOCHS
        state.alignment_history.append((epoch, est.value, decision.value))
        if epoch > 0:
            state.log_rows[-1]["kl_estimate"] = est.value
        log.info("align epoch %d: KL=%.4f (%s)", epoch, est.value, decision.value)
        if decision.stops:
            state.stage_decision = decision.value
            return decision
        stage_step = _run_epoch(state, "align", ("query_only",), stage_step)
        state.align_steps = stage_step
        epoch += 1


def finetune_stage(state: TrainState, update_sets: Sequence[str] = ("both",)) -> Checkpoint:
    """``num_epochs`` epochs with validation after each; returns the best epoch's checkpoint."""
    cfg = state.cfg
    if cfg.num_epochs == 0:
        stage = "aligned" if state.alignment_history else "initial"
        return Checkpoint.capture(state, 0, stage, None)
    state.reset_cache()
    best: Checkpoint | None = None
    stage_step = 0 if cfg.rewarm_each_stage else state.align_steps
    for epoch in range(1, cfg.num_epochs + 1):
        stage_step = _run_epoch(state, "finetune", update_sets, stage_step)
        score = validation_ndcg(state.model, state.data, cfg.eval_cutoff)
        log.info("finetune epoch %d: nDCG@%d=%.4f", epoch, cfg.eval_cutoff, score)
        if best is None or score > best.validation_score:
            best = Checkpoint.capture(state, epoch, "finetuned", score)
    return best


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    log_rows: list
    alignment_history: list
    align_decision: str | None
    collapsed: bool


def daft_train(data: TrainingData, cfg: TrainConfig, model: DualEncoder,
               on_stage_end: Callable[[str, DualEncoder], None] | None = None) -> TrainResult:
    """Run the training mode selected by ``cfg.mode`` on ``model`` (updated in place).

    ``on_stage_end(stage, model)`` is called with ``"initial"`` before any
    update and, in ``daft`` mode, with ``"aligned"`` after stage 1.
    """
    notify = on_stage_end or (lambda stage, m: None)
    state = TrainState.create(model, data, cfg)
    notify("initial", model)
    if cfg.mode == "daft":
        align_stage(state)
        notify("aligned", model)
        best = finetune_stage(state, ("both",))
    elif cfg.mode == "no_alignment":
        best = finetune_stage(state, ("both",))
    else:
        best = finetune_stage(state, ("query_only", "doc_only"))
    stage = "finetuned" if cfg.num_epochs else best.stage
    last = Checkpoint.capture(state, cfg.num_epochs, stage, best.validation_score if cfg.num_epochs == 0 else None)
    return TrainResult(best, last, state.log_rows, state.alignment_history, state.stage_decision,
                       state.detector.collapsed)


def write_train_log(rows, path) -> None:
    """CSV ``step,stage,loss,lr,kl_estimate,collapsed``; kl_estimate is empty off epoch ends."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,stage,loss,lr,kl_estimate,collapsed\n")
        for r in rows:
            kl = "" if r["kl_estimate"] is None else repr(r["kl_estimate"])
            fh.write(f"{r['step']},{r['stage']},{r['loss']!r},{r['lr']!r},{kl},{str(r['collapsed']).lower()}\n")

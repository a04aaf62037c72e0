"""Tokenization and the two toy encoder families.

Both families end in the same head: a linear projection ``W h + b`` (shared
between the query and document encoder by default) followed by L2
normalization, so every encoder maps into the same ``out_dim``-dimensional
unit sphere regardless of its internals.

``tiny_attention`` is a post-LN transformer over learned token + position
embeddings, pooled at the CLS position. ``mean_pool`` averages the
non-contextual embeddings of the content tokens (CLS and PAD excluded).
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DataFormatError, DegenerateInputError
from .numerics import Tensor

PAD, UNK, CLS = 0, 1, 2
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]")

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)


def split_words(text: str) -> list[str]:
    return _PUNCT.sub("", text.lower()).split()


class Vocabulary:
    """Dense token -> id map; ids 0..2 are PAD, UNK and CLS."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:3]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with [PAD], [UNK], [CLS]")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    pad_id, unk_id, cls_id = PAD, UNK, CLS

    def __len__(self):
        return len(self.itos)

    @property
    def size(self) -> int:
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.itos):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataFormatError(path, lineno, "expected 'token<TAB>id'")
                try:
                    idx = int(parts[1])
                except ValueError:
                    raise DataFormatError(path, lineno, f"non-integer id {parts[1]!r}") from None
                if idx != len(tokens):
                    raise DataFormatError(path, lineno, f"ids must be dense and ordered, got {idx}")
                tokens.append(parts[0])
        try:
            return cls(tokens)
        except ValueError as exc:
            raise DataFormatError(path, 1, str(exc)) from None


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Keep the ``max_size - 3`` most frequent words; ties go to the lexicographically smaller."""
    if max_size < len(SPECIAL_TOKENS):
        raise ValueError("max_size must leave room for the 3 special tokens")
    counts: Counter[str] = Counter()
    seen_any = False
    for text in corpus:
        seen_any = True
        counts.update(split_words(text))
    if not seen_any:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked if w not in SPECIAL_TOKENS][: max_size - 3]
    return Vocabulary(list(SPECIAL_TOKENS) + words)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Lowercase, strip punctuation, split on whitespace, map to ids, prepend CLS."""
    ids = [CLS] + [vocab[w] for w in split_words(text)]
    return ids[:max(1, max_len)]


# ---------------------------------------------------------------------------
# configuration and parameters
# ---------------------------------------------------------------------------

ENCODER_KINDS = ("mean_pool", "tiny_attention", "constant")


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "tiny_attention"
    vocab_size: int = 2000
    hidden_dim: int = 64
    num_blocks: int = 2
    num_heads: int = 4
    ff_dim: int = 128
    max_seq_len: int = 64
    init_std: float = 0.02

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        if self.max_seq_len < 1 or self.hidden_dim < 1 or self.vocab_size < 4:
            raise ConfigError("max_seq_len, hidden_dim must be >= 1 and vocab_size >= 4")
        if self.kind == "tiny_attention":
            if self.num_heads < 1 or self.hidden_dim % self.num_heads:
                raise ConfigError("hidden_dim must be divisible by num_heads")
            if self.num_blocks < 0 or self.ff_dim < 1:
                raise ConfigError("num_blocks must be >= 0 and ff_dim >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown encoder options: {sorted(unknown)}")
        return cls(**d)


def query_encoder_config(vocab_size: int, **overrides) -> EncoderConfig:
    base = dict(kind="tiny_attention", vocab_size=vocab_size, hidden_dim=64,
                num_blocks=1, num_heads=2, ff_dim=64)
    base.update(overrides)
    return EncoderConfig(**base)


def document_encoder_config(vocab_size: int, **overrides) -> EncoderConfig:
    base = dict(kind="tiny_attention", vocab_size=vocab_size, hidden_dim=64,
                num_blocks=2, num_heads=4, ff_dim=128)
    base.update(overrides)
    return EncoderConfig(**base)


def init_params(config: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Random weights, deterministic in ``seed``.

    Embeddings ~ N(0, init_std^2); linear weights ~ N(0, 1/fan_in) so every
    block starts with unit-scale activations; biases 0; layer-norm gains 1.
    The ``constant`` kind has no parameters.
    """
    rng = np.random.default_rng(seed)
    d = config.hidden_dim
    std = config.init_std
    p: dict[str, np.ndarray] = {}
    if config.kind == "constant":
        return p
    p["tok_emb"] = rng.normal(0.0, std, (config.vocab_size, d))
    p["pos_emb"] = rng.normal(0.0, std, (config.max_seq_len, d))
    if config.kind == "mean_pool":
        return p
    p["ln_emb.g"] = np.ones(d)
    p["ln_emb.b"] = np.zeros(d)
    for i in range(config.num_blocks):
        pre = f"blocks.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, d))
        # no key bias: it adds q.b_k to every score of a row, which softmax cancels
        for name in ("bq", "bv", "bo"):
            p[pre + name] = np.zeros(d)
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "w1"] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, config.ff_dim))
        p[pre + "b1"] = np.zeros(config.ff_dim)
        p[pre + "w2"] = rng.normal(0.0, 1.0 / math.sqrt(config.ff_dim), (config.ff_dim, d))
        p[pre + "b2"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
    return p


def init_projection(in_dim: int, out_dim: int, seed: int) -> dict[str, np.ndarray]:
    """Projection ``W`` of shape (out_dim, in_dim) ~ N(0, 1/in_dim), bias 0."""
    rng = np.random.default_rng(seed)
    return {"w": rng.normal(0.0, 1.0 / math.sqrt(in_dim), (out_dim, in_dim)),
            "b": np.zeros(out_dim)}


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    """Truncate to ``max_len`` and right-pad with PAD into an int array."""
    if not seqs:
        raise ValueError("empty batch")
    seqs = [list(s)[:max_len] for s in seqs]
    if any(len(s) == 0 for s in seqs):
        raise ValueError("cannot encode an empty id sequence")
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids


def _check_ids(ids: np.ndarray, config: EncoderConfig):
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise IndexError(f"token id out of range for vocab_size={config.vocab_size}")


def _as_param_tensors(params):
    return {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in params.items()}


def _attention_block(x: Tensor, p, pre: str, key_bias: np.ndarray, heads: int,
                     cls_only: bool = False) -> Tensor:
    """One post-LN transformer block.

    With ``cls_only`` the block still attends over every position but only
    computes the output row of position 0, which is all CLS pooling reads
    from the last block.
    """
    bsz, width, d = x.shape
    dh = d // heads
    rows = x[:, :1, :] if cls_only else x
    out_width = rows.shape[1]

    def split(t, w):
        return t.reshape(bsz, w, heads, dh).transpose(0, 2, 1, 3)

    q = split(rows @ p[pre + "wq"] + p[pre + "bq"], out_width)
    k = split(x @ p[pre + "wk"], width)
    v = split(x @ p[pre + "wv"] + p[pre + "bv"], width)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + key_bias
    ctx = nx.softmax(scores, axis=-1) @ v
    ctx = ctx.transpose(0, 2, 1, 3).reshape(bsz, out_width, d)
    h = nx.layer_norm(rows + (ctx @ p[pre + "wo"] + p[pre + "bo"]), p[pre + "ln1.g"], p[pre + "ln1.b"])
    ff = nx.gelu(h @ p[pre + "w1"] + p[pre + "b1"]) @ p[pre + "w2"] + p[pre + "b2"]
    return nx.layer_norm(h + ff, p[pre + "ln2.g"], p[pre + "ln2.b"])


def pooled_hidden(params, config: EncoderConfig, ids: np.ndarray) -> Tensor:
    """Pre-projection representation ``h`` of shape (B, hidden_dim)."""
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[:, : config.max_seq_len]
    _check_ids(ids, config)
    p = _as_param_tensors(params)
    bsz, width = ids.shape
    if config.kind == "constant":
        raise ValueError("the constant encoder has no hidden state")
    emb = p["tok_emb"][ids] + p["pos_emb"][:width]
    if config.kind == "mean_pool":
        content = (ids != PAD) & (ids != CLS)
        # a sequence of only CLS falls back to its CLS embedding
        empty = ~content.any(axis=1)
        content[empty, 0] = True
        weights = content / content.sum(axis=1, keepdims=True)
        return (emb * weights[:, :, None]).sum(axis=1)
    mask = ids != PAD
    key_bias = np.where(mask, 0.0, -1e9)[:, None, None, :]
    x = nx.layer_norm(emb, p["ln_emb.g"], p["ln_emb.b"])
    last = config.num_blocks - 1
    for i in range(config.num_blocks):
        x = _attention_block(x, p, f"blocks.{i}.", key_bias, config.num_heads, cls_only=i == last)
    return x[:, 0, :]


def project(h: Tensor, proj) -> Tensor:
    """``l2_normalize(h W^T + b)`` row-wise."""
    proj = _as_param_tensors(proj)
    z = h @ proj["w"].T + proj["b"]
    try:
        return nx.l2_normalize(z, axis=-1)
    except DegenerateInputError:
        raise DegenerateInputError("projection produced a zero vector") from None


def constant_vector(dim: int) -> np.ndarray:
    return np.full(dim, 1.0 / math.sqrt(dim))


def encode_ids(params, proj, config: EncoderConfig, ids: np.ndarray) -> Tensor:
    """Differentiable batch encoding of a padded id matrix to unit vectors (B, out_dim).

    The ``constant`` kind is a collapse stub: it ignores its input and the
    projection and returns the same unit vector for every row.
    """
    if config.kind == "constant":
        out_dim = proj["w"].shape[0]
        return Tensor(np.tile(constant_vector(out_dim), (len(ids), 1)))
    return project(pooled_hidden(params, config, ids), proj)


def encode(params, proj, config: EncoderConfig, ids: Sequence[int]) -> np.ndarray:
    """Encode one id sequence to a unit vector (no gradient)."""
    if len(ids) == 0:
        raise ValueError("cannot encode an empty id sequence")
    return encode_ids(params, proj, config, pad_batch([ids], config.max_seq_len)).data[0].copy()


def encode_many(params, proj, config: EncoderConfig, seqs: Sequence[Sequence[int]],
                batch_size: int = 256) -> np.ndarray:
    """Encode many id sequences (no gradient), in corpus order."""
    out = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        out.append(encode_ids(params, proj, config, pad_batch(chunk, config.max_seq_len)).data)
    if not out:
        return np.zeros((0, proj["w"].shape[0]))
    return np.concatenate(out, axis=0)

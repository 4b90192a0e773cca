"""Skip-gram word embeddings trained with negative sampling.

Each profile contributes one token stream (its merged channels); context
windows never cross stream boundaries. The hot loop is compiled with numba
(:mod:`profvec._sgns_kernel`); :func:`sgns_step` is the plain numpy form of
one update and serves as the reference for it.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _sgns_kernel
from .errors import OOVError, ParseError, TrainingError, ValidationError, VocabularyError
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    counts: np.ndarray
    min_count: int
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if len(self.tokens) != counts.shape[0]:
            raise VocabularyError("tokens and counts differ in length")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise VocabularyError("duplicate vocabulary tokens")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @property
    def total_tokens(self) -> int:
        return int(self.counts.sum())

    def count(self, token: str) -> int:
        return int(self.counts[self.index[token]])

    def encode(self, stream: Iterable[str]) -> np.ndarray:
        idx = self.index
        return np.fromiter((idx[t] for t in stream if t in idx), dtype=np.int64)


def build_vocab(token_streams: Iterable[Sequence[str]], min_count: int) -> Vocabulary:
    tally = Counter()
    for stream in token_streams:
        tally.update(stream)
    kept = sorted(((tok, c) for tok, c in tally.items() if c >= min_count),
                  key=lambda tc: (-tc[1], tc[0]))
    if not kept:
        raise VocabularyError("no tokens meet min_count")
    return Vocabulary(tuple(t for t, _ in kept), np.array([c for _, c in kept]), min_count)


@dataclass(frozen=True)
class Hyperparams:
    dim: int = 300
    window: int = 5
    negatives: int = 10
    epochs: int = 5
    initial_lr: float = 0.025
    min_count: int = 5
    table_power: float = 0.75
    table_size: int = 10_000_000
    dynamic_window: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise ValidationError("dim, window and negatives must be >= 1")
        if self.epochs < 0 or self.min_count < 1:
            raise ValidationError("epochs must be >= 0 and min_count >= 1")
        if not self.initial_lr > 0:
            raise ValidationError("initial_lr must be positive")
        if not 0 < self.table_power <= 1:
            raise ValidationError("table_power must be in (0, 1]")
        if self.table_size < 1:
            raise ValidationError("table_size must be positive")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Hyperparams":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown embedding hyperparameters {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


# --- negative sampling table ------------------------------------------------

@dataclass(frozen=True)
class NegativeTable:
    table: np.ndarray
    slots: np.ndarray

    def __len__(self):
        return self.table.shape[0]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.table[rng.integers(0, self.table.shape[0], size=size)]


def allocate_slots(weights: np.ndarray, size: int) -> np.ndarray:
    """Largest-remainder apportionment of ``size`` slots, at least one each."""
    weights = np.asarray(weights, dtype=np.float64)
    if size < weights.shape[0]:
        raise ValidationError(f"table size {size} is smaller than vocabulary size {weights.shape[0]}")
    ideal = weights / weights.sum() * size
    slots = np.floor(ideal).astype(np.int64)
    short = size - int(slots.sum())
    if short:
        remainders = ideal - slots
        # stable sort: equal remainders go to the lower index
        order = np.argsort(-remainders, kind="stable")
        slots[order[:short]] += 1
    for i in np.flatnonzero(slots == 0):
        donor = int(np.argmax(slots))
        slots[donor] -= 1
        slots[i] = 1
    return slots


def build_negative_table(vocab: Vocabulary, table_power: float = 0.75,
                         table_size: int = 10_000_000) -> NegativeTable:
    slots = allocate_slots(vocab.counts.astype(np.float64) ** table_power, table_size)
    table = np.repeat(np.arange(len(vocab), dtype=np.int64), slots)
    return NegativeTable(table=table, slots=slots)


# --- model -------------------------------------------------------------------

@dataclass
class EmbeddingModel:
    vocab: Vocabulary
    input_vectors: np.ndarray
    output_vectors: np.ndarray | None
    hyperparams: Hyperparams

    def __post_init__(self):
        v, k = len(self.vocab), self.hyperparams.dim
        if self.input_vectors.shape != (v, k):
            raise ValidationError(f"input vectors have shape {self.input_vectors.shape}, expected {(v, k)}")
        if self.output_vectors is not None and self.output_vectors.shape != (v, k):
            raise ValidationError("output vectors do not match the vocabulary")

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def vector(self, token: str) -> np.ndarray:
        try:
            return self.input_vectors[self.vocab.index[token]]
        except KeyError:
            raise OOVError(token) from None


def init_model(vocab: Vocabulary, hp: Hyperparams) -> EmbeddingModel:
    rng = np.random.default_rng(derive_seed(hp.seed, "embed/init"))
    half = 0.5 / hp.dim
    w_in = rng.uniform(-half, half, size=(len(vocab), hp.dim))
    w_out = np.zeros((len(vocab), hp.dim))
    return EmbeddingModel(vocab, w_in, w_out, hp)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sgns_loss(v_center, u_context, u_negatives) -> float:
    """Negative of the SGNS objective for one pair:
    ``-log s(u_o . v) - sum_i log s(-u_i . v)`` with s the logistic function."""
    pos = float(u_context @ v_center)
    neg = np.asarray(u_negatives).reshape(-1, v_center.shape[0]) @ v_center
    return float(np.logaddexp(0.0, -pos) + np.logaddexp(0.0, neg).sum())


def sgns_gradients(v_center, u_context, u_negatives):
    """Gradients of :func:`sgns_loss` w.r.t. the center, context and each negative row."""
    u_negatives = np.asarray(u_negatives).reshape(-1, v_center.shape[0])
    g_pos = _sigmoid(u_context @ v_center) - 1.0
    g_neg = _sigmoid(u_negatives @ v_center)
    d_center = g_pos * u_context + g_neg @ u_negatives
    d_context = g_pos * v_center
    d_negatives = g_neg[:, None] * v_center[None, :]
    return d_center, d_context, d_negatives


def sgns_step(center_idx: int, context_idx: int, negatives: Sequence[int], lr: float,
              model: EmbeddingModel) -> EmbeddingModel:
    """One simultaneous gradient step on the pair's loss, updating ``model`` in place.

    Repeated negative indices accumulate their gradients.
    """
    w_in, w_out = model.input_vectors, model.output_vectors
    negatives = np.asarray(negatives, dtype=np.int64)
    v = w_in[center_idx].copy()
    d_center, d_context, d_negatives = sgns_gradients(v, w_out[context_idx], w_out[negatives])
    targets = np.concatenate(([context_idx], negatives))
    row_grads = np.vstack((d_context[None, :], d_negatives))
    np.add.at(w_out, targets, -lr * row_grads)
    w_in[center_idx] = v - lr * d_center
    touched = np.concatenate((w_in[center_idx], w_out[targets].ravel()))
    if not np.all(np.isfinite(touched)):
        raise TrainingError(f"non-finite values after update of center {model.vocab.tokens[center_idx]!r}")
    return model


def count_pairs(length: int, window: int) -> int:
    """Number of (center, context) pairs a fixed window yields on one stream."""
    if length <= 1:
        return 0
    total = 0
    for t in range(length):
        total += min(t, window) + min(length - 1 - t, window)
    return total


def _encode_streams(vocab: Vocabulary, streams: Iterable[Sequence[str]]):
    encoded = [vocab.encode(s) for s in streams]
    lengths = np.array([e.shape[0] for e in encoded], dtype=np.int64)
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    tokens = np.concatenate(encoded) if encoded else np.zeros(0, dtype=np.int64)
    return tokens, offsets, lengths


def _chunk_work(lengths, hp: Hyperparams) -> float:
    per_epoch = (int(lengths.sum()) if hp.dynamic_window
                 else sum(count_pairs(int(n), hp.window) for n in lengths))
    return float(max(per_epoch * hp.epochs, 1))


def train_skipgram(token_streams: Sequence[Sequence[str]], hp: Hyperparams,
                   workers: int = 1) -> EmbeddingModel:
    """Train on one token stream per profile.

    Linear learning-rate decay runs from ``initial_lr`` to ``initial_lr/1e4``
    over the scheduled pair count. With ``workers > 1`` the streams are split
    into contiguous chunks trained concurrently on shared matrices without
    locking; results are then schedule dependent.
    """
    token_streams = [tuple(s) for s in token_streams]
    vocab = build_vocab(token_streams, hp.min_count)
    table = build_negative_table(vocab, hp.table_power, hp.table_size)
    model = init_model(vocab, hp)
    if hp.epochs == 0:
        return model
    tokens, offsets, lengths = _encode_streams(vocab, token_streams)
    workers = max(1, min(int(workers), len(token_streams)))
    bounds = np.linspace(0, len(token_streams), workers + 1).round().astype(int)
    jobs = []
    for w in range(workers):
        a, b = bounds[w], bounds[w + 1]
        chunk_offsets = offsets[a:b + 1] - offsets[a]
        chunk_tokens = tokens[offsets[a]:offsets[b]]
        jobs.append((chunk_tokens, chunk_offsets, _chunk_work(lengths[a:b], hp),
                     derive_seed(hp.seed, f"embed/worker{w}"), int(offsets[a])))

    def run(job):
        chunk_tokens, chunk_offsets, work, seed, base = job
        status = np.zeros(3, dtype=np.int64)
        _sgns_kernel.train_chunk(
            model.input_vectors, model.output_vectors, chunk_tokens, chunk_offsets, table.table,
            hp.window, hp.negatives, hp.epochs, hp.initial_lr, work, hp.dynamic_window,
            seed, status)
        return status, chunk_tokens, base

    if workers == 1:
        results = [run(jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    for status, chunk_tokens, _base in results:
        if status[0] == 0:
            token = vocab.tokens[int(chunk_tokens[status[2]])]
            raise TrainingError(
                f"non-finite embedding values after {int(status[1])} pair updates "
                f"(center token {token!r})")
    log.debug("trained %d x %d embeddings", len(vocab), hp.dim)
    return model


# --- queries -----------------------------------------------------------------

def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


def most_similar(model: EmbeddingModel, token: str, top_k: int = 10) -> list[tuple[str, float]]:
    if top_k < 1:
        raise ValidationError("top_k must be >= 1")
    if token not in model.vocab:
        raise OOVError(token)
    unit = _unit_rows(model.input_vectors)
    q = model.vocab.index[token]
    sims = unit @ unit[q]
    ranked = sorted(((float(sims[i]), tok) for i, tok in enumerate(model.vocab.tokens) if i != q),
                    key=lambda st: (-st[0], st[1]))
    return [(tok, sim) for sim, tok in ranked[:top_k]]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# --- persistence -------------------------------------------------------------

def save_embeddings(model: EmbeddingModel, path) -> None:
    """Plain-text word vectors: ``V k`` header, then ``token f1 .. fk`` per row."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as out:
        out.write(f"{len(model.vocab)} {model.dim}\n")
        for tok, row in zip(model.vocab.tokens, model.input_vectors):
            out.write(tok + " " + " ".join(f"{x:.9g}" for x in row) + "\n")


def load_embeddings(path) -> EmbeddingModel:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 2:
            raise ParseError("header must be 'V k'", path, 1)
        try:
            n_rows, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError("header must hold two integers", path, 1) from None
        if n_rows < 1 or dim < 1:
            raise ParseError(f"invalid header V={n_rows} k={dim}", path, 1)
        tokens = []
        vectors = np.empty((n_rows, dim))
        lineno = 1
        for lineno, line in enumerate(handle, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(tokens) >= n_rows:
                raise ParseError(f"more rows than the header's V={n_rows}", path, lineno)
            if len(parts) != dim + 1:
                raise ParseError(f"expected token and {dim} values, got {len(parts) - 1}", path, lineno)
            try:
                vectors[len(tokens)] = [float(x) for x in parts[1:]]
            except ValueError:
                raise ParseError("non-numeric vector component", path, lineno) from None
            tokens.append(parts[0])
        if len(tokens) != n_rows:
            raise ParseError(f"header declares {n_rows} rows but file has {len(tokens)} (end of file)",
                             path, lineno + 1)
    if not np.all(np.isfinite(vectors)):
        raise ParseError("non-finite vector component", path)
    vocab = Vocabulary(tuple(tokens), np.zeros(n_rows, dtype=np.int64), min_count=0)
    return EmbeddingModel(vocab, vectors, None, replace(Hyperparams(), dim=dim))

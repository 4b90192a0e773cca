"""Profile feature vectors.

Five ways to fold a profile's word vectors into one k-vector, all summing
over the profile's *unique* in-vocabulary words ``i`` with vector ``w_i``,
count ``c_i`` and tf-idf weight ``t_i = c_i * idf(i)``:

==============  ============================
sum             sum_i w_i
avg             sum / n
sum_count       sum_i c_i w_i
sum_tfidf       sum_i t_i w_i
avg_sum_count   sum_count / n
==============  ============================

plus ``baseline_tf``, a sparse unigram count map used by the baseline models.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embed import EmbeddingModel, Vocabulary
from .errors import ParseError, ValidationError
from .ingest import Label
from .preprocess import TokenizedProfile

DENSE_METHODS = ("sum", "avg", "sum_count", "sum_tfidf", "avg_sum_count")
METHODS = DENSE_METHODS + ("baseline_tf",)


def _tokens_of(profile) -> Sequence[str]:
    if isinstance(profile, TokenizedProfile):
        return profile.merged_tokens
    return profile


@dataclass(frozen=True)
class IdfTable:
    values: Mapping[str, float]
    n_docs: int

    def __getitem__(self, token: str) -> float:
        return self.values[token]

    def __contains__(self, token) -> bool:
        return token in self.values


def smoothed_idf(n_docs: int, df: int) -> float:
    return math.log((1 + n_docs) / (1 + df)) + 1.0


def build_idf(training_profiles: Iterable, vocab: Vocabulary) -> IdfTable:
    """Document frequency counts one profile (all channels merged) as one document."""
    df = Counter()
    n_docs = 0
    for prof in training_profiles:
        n_docs += 1
        df.update(set(_tokens_of(prof)))
    if n_docs == 0:
        raise ValidationError("cannot build idf from zero training profiles")
    return IdfTable({tok: smoothed_idf(n_docs, df.get(tok, 0)) for tok in vocab.tokens}, n_docs)


def save_idf(idf: IdfTable, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as out:
        out.write(f"#n_docs\t{idf.n_docs}\n")
        for tok, value in idf.values.items():
            out.write(f"{tok}\t{value!r}\n")


def load_idf(path) -> IdfTable:
    path = Path(path)
    values = {}
    n_docs = 0
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'token<TAB>idf'", path, lineno)
            try:
                if parts[0] == "#n_docs":
                    n_docs = int(parts[1])
                    continue
                value = float(parts[1])
            except ValueError:
                raise ParseError("non-numeric idf value", path, lineno) from None
            if not value > 0:
                raise ParseError(f"idf must be positive, got {value}", path, lineno)
            values[parts[0]] = value
    return IdfTable(values, n_docs)


@dataclass(frozen=True)
class ProfileTermStats:
    tokens: tuple[str, ...]
    indices: np.ndarray
    counts: np.ndarray
    tfidf: np.ndarray | None

    @property
    def n(self) -> int:
        return len(self.tokens)


def compute_term_stats(profile, vocab: Vocabulary, idf: IdfTable | None = None) -> ProfileTermStats:
    """Counts over in-vocabulary tokens, ordered by vocabulary index so the
    result does not depend on token order within the profile."""
    tally = Counter(t for t in _tokens_of(profile) if t in vocab)
    ordered = sorted(tally, key=vocab.index.__getitem__)
    counts = np.array([tally[t] for t in ordered], dtype=np.float64)
    tfidf = None
    if idf is not None:
        missing = [t for t in ordered if t not in idf]
        if missing:
            raise ValidationError(f"idf table lacks vocabulary tokens, e.g. {missing[0]!r}")
        tfidf = counts * np.array([idf[t] for t in ordered], dtype=np.float64)
    return ProfileTermStats(
        tokens=tuple(ordered),
        indices=np.array([vocab.index[t] for t in ordered], dtype=np.int64),
        counts=counts,
        tfidf=tfidf,
    )


@dataclass(frozen=True)
class ProfileVector:
    method: str
    values: np.ndarray | None = None
    sparse: Mapping[str, int] | None = None
    oov_profile: bool = False


def aggregate(stats: ProfileTermStats, model: EmbeddingModel, method: str) -> ProfileVector:
    if method not in DENSE_METHODS:
        raise ValidationError(f"unknown aggregation method {method!r}")
    k = model.dim
    if stats.n == 0:
        return ProfileVector(method, np.zeros(k), oov_profile=True)
    vectors = model.input_vectors[stats.indices]
    if method in ("sum", "avg"):
        total = vectors.sum(axis=0)
    elif method in ("sum_count", "avg_sum_count"):
        total = stats.counts @ vectors
    else:
        if stats.tfidf is None:
            raise ValidationError("sum_tfidf needs term stats computed with an idf table")
        total = stats.tfidf @ vectors
    if method in ("avg", "avg_sum_count"):
        total = total / stats.n
    return ProfileVector(method, total)


def baseline_tf_vector(profile, vocab: Vocabulary) -> ProfileVector:
    tally = Counter(t for t in _tokens_of(profile) if t in vocab)
    ordered = dict(sorted(tally.items(), key=lambda kv: vocab.index[kv[0]]))
    return ProfileVector("baseline_tf", sparse=ordered, oov_profile=not ordered)


def vectorize(profiles: Sequence, model: EmbeddingModel, method: str,
              idf: IdfTable | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack dense profile vectors into an (n, k) matrix plus an OOV mask."""
    rows = np.zeros((len(profiles), model.dim))
    oov = np.zeros(len(profiles), dtype=bool)
    use_idf = idf if method == "sum_tfidf" else None
    for i, prof in enumerate(profiles):
        vec = aggregate(compute_term_stats(prof, model.vocab, use_idf), model, method)
        rows[i] = vec.values
        oov[i] = vec.oov_profile
    return rows, oov


def sparse_matrix(profiles: Sequence, vocab: Vocabulary) -> np.ndarray:
    """Dense (n, V) count matrix of the baseline unigram features."""
    out = np.zeros((len(profiles), len(vocab)))
    for i, prof in enumerate(profiles):
        for tok, c in baseline_tf_vector(prof, vocab).sparse.items():
            out[i, vocab.index[tok]] = c
    return out


# --- feature files -----------------------------------------------------------

@dataclass
class FeatureTable:
    ids: list[str]
    labels: list[Label]
    matrix: np.ndarray
    feature_names: list[str] | None = None  # set for sparse (token-keyed) features


def write_dense_features(path, ids, labels, matrix) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as out:
        for pid, label, row in zip(ids, labels, matrix):
            out.write("\t".join([pid, label.value] + [repr(float(x)) for x in row]) + "\n")


def write_sparse_features(path, ids, labels, maps: Sequence[Mapping[str, int]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as out:
        for pid, label, counts in zip(ids, labels, maps):
            cells = [f"{tok}:{c}" for tok, c in counts.items()]
            out.write("\t".join([pid, label.value] + cells) + "\n")


def read_features(path, feature_names: Sequence[str] | None = None) -> FeatureTable:
    """Read dense or sparse feature files.

    Sparse rows (``token:count`` cells) are laid out over ``feature_names``
    when given, otherwise over the sorted union of tokens in the file.
    """
    path = Path(path)
    ids, labels, rows = [], [], []
    sparse = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ParseError("expected 'id<TAB>label<TAB>features...'", path, lineno)
            try:
                label = Label(parts[1])
            except ValueError:
                raise ParseError(f"invalid label {parts[1]!r}", path, lineno) from None
            cells = parts[2:]
            row_sparse = bool(cells) and ":" in cells[0]
            if sparse is None and cells:
                sparse = row_sparse
            elif cells and row_sparse != sparse:
                raise ParseError("mixed dense and sparse rows", path, lineno)
            try:
                if row_sparse or (not cells and sparse):
                    row = {}
                    for cell in cells:
                        tok, _, c = cell.rpartition(":")
                        row[tok] = float(c)
                else:
                    row = [float(x) for x in cells]
            except ValueError:
                raise ParseError("non-numeric feature value", path, lineno) from None
            ids.append(parts[0])
            labels.append(label)
            rows.append(row)
    if sparse:
        names = list(feature_names) if feature_names is not None else sorted(
            {tok for row in rows for tok in (row if isinstance(row, dict) else ())})
        col = {tok: j for j, tok in enumerate(names)}
        matrix = np.zeros((len(rows), len(names)))
        for i, row in enumerate(rows):
            for tok, c in (row.items() if isinstance(row, dict) else ()):
                if tok in col:
                    matrix[i, col[tok]] = c
        return FeatureTable(ids, labels, matrix, names)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ParseError(f"rows have differing widths {sorted(widths)}", path)
    matrix = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    return FeatureTable(ids, labels, matrix)

"""Leakage-safe k-fold cross validation of the full pipeline, and metrics.

Everything learned from text (vocabulary, embeddings, idf) is rebuilt per
fold from that fold's training profiles only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import FORMAT_VERSIONS
from .embed import Hyperparams, Vocabulary, build_vocab, train_skipgram
from .errors import DegenerateLabelsError, LeakageError, ProfvecError, ValidationError
from .features import DENSE_METHODS, METHODS, IdfTable, build_idf, sparse_matrix, vectorize
from .ingest import Label
from .model import TrainConfig, predict, train
from .preprocess import PreprocessConfig, TokenizedProfile, preprocess_profile
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

REPORT_FORMAT = "profvec-cv-report"


# --- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: Mapping[str, int]
    seed: int
    stratified: bool = True

    def test_ids(self, fold: int) -> list[str]:
        return sorted(pid for pid, f in self.assignment.items() if f == fold)

    def train_ids(self, fold: int) -> list[str]:
        return sorted(pid for pid, f in self.assignment.items() if f != fold)


def make_folds(labels: Mapping[str, Label], k: int = 10, seed: int = 0,
               stratify: bool = True) -> FoldPlan:
    """Seeded shuffle within each class, then round-robin over folds.

    Negatives continue the round-robin where the positives stopped so total
    fold sizes stay within one of each other as well.
    """
    if k < 2:
        raise ValidationError("k must be at least 2 (k=1 leaves no held-out data)")
    pos = sorted(pid for pid, lab in labels.items() if lab is Label.GANG)
    neg = sorted(pid for pid, lab in labels.items() if lab is Label.NON_GANG)
    if not pos or not neg:
        raise DegenerateLabelsError()
    if k > len(pos) or k > len(neg):
        raise ValidationError(
            f"k={k} exceeds the smaller class size ({min(len(pos), len(neg))})")
    assignment = {}
    if stratify:
        rng = rng_for(seed, "folds/stratified")
        start = 0
        for ids in (pos, neg):
            shuffled = [ids[i] for i in rng.permutation(len(ids))]
            for i, pid in enumerate(shuffled):
                assignment[pid] = (start + i) % k
            start = (start + len(shuffled)) % k
    else:
        rng = rng_for(seed, "folds/plain")
        ids = sorted(pos + neg)
        for i, j in enumerate(rng.permutation(len(ids))):
            assignment[ids[j]] = i % k
    return FoldPlan(k=k, assignment=dict(sorted(assignment.items())), seed=seed,
                    stratified=stratify)


# --- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        y_true = np.asarray(y_true, dtype=bool)
        y_pred = np.asarray(y_pred, dtype=bool)
        return cls(tp=int(np.sum(y_true & y_pred)), fp=int(np.sum(~y_true & y_pred)),
                   tn=int(np.sum(~y_true & ~y_pred)), fn=int(np.sum(y_true & ~y_pred)))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


def _ratio(num: int, den: int, what: str) -> float:
    if den == 0:
        log.warning("%s is 0/0; reporting 0", what)
        return 0.0
    return num / den


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _class_metrics(tp, fp, fn, name) -> ClassMetrics:
    p = _ratio(tp, tp + fp, f"{name} precision")
    r = _ratio(tp, tp + fn, f"{name} recall")
    return ClassMetrics(p, r, harmonic_f1(p, r))


def compute_metrics(confusion: ConfusionCounts) -> dict[str, ClassMetrics]:
    """Per-class precision/recall/F1; non_gang swaps the roles of the classes."""
    c = confusion
    return {
        "gang": _class_metrics(c.tp, c.fp, c.fn, "gang"),
        "non_gang": _class_metrics(c.tn, c.fn, c.fp, "non_gang"),
    }


def macro_metrics(per_fold: Sequence[Mapping[str, ClassMetrics]]) -> dict[str, ClassMetrics]:
    """Mean of each per-fold metric, F1 included (not recomputed from means)."""
    out = {}
    for cls in ("gang", "non_gang"):
        rows = [m[cls] for m in per_fold]
        out[cls] = ClassMetrics(
            float(np.mean([r.precision for r in rows])),
            float(np.mean([r.recall for r in rows])),
            float(np.mean([r.f1 for r in rows])),
        )
    return out


# --- report ------------------------------------------------------------------

@dataclass
class FoldResult:
    index: int
    n_train: int
    n_test: int
    vocab_size: int
    confusion: ConfusionCounts
    oov_test_profiles: int = 0

    @property
    def metrics(self) -> dict[str, ClassMetrics]:
        return compute_metrics(self.confusion)


@dataclass
class EvaluationReport:
    descriptor: dict
    folds: list[FoldResult]

    def _require_folds(self):
        if not self.folds:
            raise ValidationError("no folds")

    @property
    def pooled_confusion(self) -> ConfusionCounts:
        self._require_folds()
        total = ConfusionCounts()
        for f in self.folds:
            total = total + f.confusion
        return total

    @property
    def pooled(self) -> dict[str, ClassMetrics]:
        return compute_metrics(self.pooled_confusion)

    @property
    def macro(self) -> dict[str, ClassMetrics]:
        self._require_folds()
        return macro_metrics([f.metrics for f in self.folds])

    def scope(self, name: str) -> dict[str, ClassMetrics]:
        if name == "pooled":
            return self.pooled
        if name == "macro":
            return self.macro
        raise ValidationError(f"unknown metric scope {name!r}")

    @property
    def label(self) -> str:
        return f"{self.descriptor.get('method')}/{self.descriptor.get('algorithm')}"

    def to_dict(self) -> dict:
        self._require_folds()

        def metrics_dict(m):
            return {cls: asdict(v) for cls, v in m.items()}

        return {
            "descriptor": self.descriptor,
            "folds": [
                {
                    "index": f.index,
                    "n_train": f.n_train,
                    "n_test": f.n_test,
                    "vocab_size": f.vocab_size,
                    "oov_test_profiles": f.oov_test_profiles,
                    "confusion": asdict(f.confusion),
                    "metrics": metrics_dict(f.metrics),
                }
                for f in self.folds
            ],
            "pooled": {"confusion": asdict(self.pooled_confusion),
                       "metrics": metrics_dict(self.pooled)},
            "macro": {"metrics": metrics_dict(self.macro)},
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EvaluationReport":
        folds = [
            FoldResult(index=f["index"], n_train=f["n_train"], n_test=f["n_test"],
                       vocab_size=f["vocab_size"], confusion=ConfusionCounts(**f["confusion"]),
                       oov_test_profiles=f.get("oov_test_profiles", 0))
            for f in obj["folds"]
        ]
        report = cls(descriptor=dict(obj["descriptor"]), folds=folds)
        # stored metrics must be recomputable from the stored confusions
        for f, stored in zip(report.folds, obj["folds"]):
            if _metrics_from_dict(stored["metrics"]) != f.metrics:
                raise ValidationError(f"fold {f.index} metrics disagree with its confusion counts")
        return report


def _metrics_from_dict(obj) -> dict[str, ClassMetrics]:
    return {cls: ClassMetrics(**v) for cls, v in obj.items()}


def write_reports(reports: Sequence[EvaluationReport], path, extra: Mapping | None = None) -> None:
    doc = {
        "format": REPORT_FORMAT,
        "version": FORMAT_VERSIONS["report"],
        "runs": [r.to_dict() for r in reports],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_reports(path) -> list[EvaluationReport]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != REPORT_FORMAT:
        raise ValidationError(f"{path} is not a cross-validation report")
    if doc.get("version") != FORMAT_VERSIONS["report"]:
        raise ValidationError(f"unsupported report version {doc.get('version')!r}")
    return [EvaluationReport.from_dict(r) for r in doc["runs"]]


_ALGO_LABELS = {"logreg": "LR", "random_forest": "RF", "svm": "SVM"}
_METHOD_LABELS = {
    "baseline_tf": "Baseline Model(1)",
    "sum": "V_sum",
    "avg": "V_avg",
    "sum_count": "V_sum(count)",
    "sum_tfidf": "V_sum(tf-idf)",
    "avg_sum_count": "V_avg(sum(count))",
}


def _row_label(report: EvaluationReport) -> str:
    d = report.descriptor
    if d.get("method") == "baseline_tf" and d.get("require_all_channels"):
        return "Baseline Model(2)"
    return _METHOD_LABELS.get(d.get("method"), str(d.get("method")))


def render_table(reports: Sequence[EvaluationReport], scope: str = "pooled") -> str:
    if not reports:
        raise ValidationError("no reports to render")
    header = (f"{'Model':<20} {'Classifier':<10} | {'Gang P':>7} {'Gang R':>7} {'Gang F1':>7} | "
              f"{'NG P':>7} {'NG R':>7} {'NG F1':>7}")
    lines = [f"Classification results, {reports[0].descriptor.get('folds', len(reports[0].folds))}-fold "
             f"cross validation ({scope} scope)", header, "-" * len(header)]
    for rep in reports:
        m = rep.scope(scope)
        g, ng = m["gang"], m["non_gang"]
        algo = _ALGO_LABELS.get(rep.descriptor.get("algorithm"), rep.descriptor.get("algorithm"))
        lines.append(
            f"{_row_label(rep):<20} {algo:<10} | {g.precision:7.4f} {g.recall:7.4f} {g.f1:7.4f} | "
            f"{ng.precision:7.4f} {ng.recall:7.4f} {ng.f1:7.4f}")
    return "\n".join(lines) + "\n"


def render_report(report: EvaluationReport | Sequence[EvaluationReport], format: str = "table") -> str:
    reports = [report] if isinstance(report, EvaluationReport) else list(report)
    for r in reports:
        r._require_folds()
    if format == "json":
        doc = {"format": REPORT_FORMAT, "version": FORMAT_VERSIONS["report"],
               "runs": [r.to_dict() for r in reports]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if format == "table":
        return render_table(reports, "pooled")
    if format == "table-macro":
        return render_table(reports, "macro")
    raise ValidationError(f"unknown report format {format!r}")


def relative_improvement(report: EvaluationReport, baseline: EvaluationReport,
                         scope: str = "pooled") -> float:
    """Gang-class F1 of ``report`` over ``baseline``, minus one."""
    base = baseline.scope(scope)["gang"].f1
    if base == 0:
        raise ValidationError("baseline gang F1 is 0")
    return report.scope(scope)["gang"].f1 / base - 1.0


# --- cross validation --------------------------------------------------------

def _tokenize_all(profiles, config: PreprocessConfig) -> list[TokenizedProfile]:
    out = []
    for p in profiles:
        out.append(p if isinstance(p, TokenizedProfile) else preprocess_profile(p, config))
    return out


def _check_leakage(fold: int, train_profiles, test_profiles, vocab: Vocabulary,
                   idf: IdfTable | None) -> None:
    seen_in_train = set()
    for p in train_profiles:
        seen_in_train.update(p.merged_tokens)
    test_only = set()
    for p in test_profiles:
        test_only.update(t for t in p.merged_tokens if t not in seen_in_train)
    leaked = test_only & set(vocab.tokens)
    if idf is not None:
        leaked |= test_only & set(idf.values)
    if leaked:
        raise LeakageError(f"fold {fold}: test-only tokens entered the vocabulary: {sorted(leaked)[:5]}")


@dataclass
class FoldArtifacts:
    """What one fold learned from its training profiles."""

    vocab: Vocabulary
    idf: IdfTable | None
    embedding: object | None


def run_cv_grid(profiles, preprocess_config: PreprocessConfig | None, hp: Hyperparams,
                methods: Sequence[str], train_configs: Sequence[TrainConfig],
                fold_plan: FoldPlan | None = None, *, folds: int = 10, seed: int = 0,
                stratify: bool = True, require_all_channels: bool = False,
                workers: int = 1, on_fold=None) -> list[EvaluationReport]:
    """Cross-validate every (method, classifier) pair over shared folds.

    Embeddings are trained once per fold and reused by every dense method, so
    a grid run costs one embedding fit per fold. Sub-seeds for each fold come
    from ``seed``; ``hp.seed`` and ``TrainConfig.seed`` are overridden.
    """
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}")
    config = preprocess_config or PreprocessConfig()
    tokenized = _tokenize_all(profiles, config)
    labeled = sorted((p for p in tokenized if p.label is not Label.UNLABELED), key=lambda p: p.id)
    if require_all_channels:
        labeled = [p for p in labeled if p.has_all_channels()]
    by_id = {p.id: p for p in labeled}
    if fold_plan is None:
        fold_plan = make_folds({p.id: p.label for p in labeled}, folds, seed, stratify)
    missing = set(fold_plan.assignment) - set(by_id)
    if missing:
        raise ValidationError(f"fold plan references unknown or unlabeled ids, e.g. {sorted(missing)[0]!r}")
    by_id = {pid: by_id[pid] for pid in fold_plan.assignment}

    cells = [(m, tc) for m in methods for tc in train_configs]
    results: dict[tuple, list[FoldResult]] = {(m, tc.algorithm): [] for m, tc in cells}
    dense_needed = any(m in DENSE_METHODS for m in methods)
    for fold in range(fold_plan.k):
        try:
            train_p = [by_id[i] for i in fold_plan.train_ids(fold)]
            test_p = [by_id[i] for i in fold_plan.test_ids(fold)]
            y_train = np.array([p.label is Label.GANG for p in train_p], dtype=np.int64)
            y_test = np.array([p.label is Label.GANG for p in test_p], dtype=np.int64)
            streams = [p.merged_tokens for p in train_p]
            fold_hp = replace(hp, seed=derive_seed(seed, f"embed/fold{fold}"))
            embedding = train_skipgram(streams, fold_hp, workers=workers) if dense_needed else None
            vocab = embedding.vocab if embedding is not None else build_vocab(streams, hp.min_count)
            idf = build_idf(train_p, vocab) if "sum_tfidf" in methods else None
            _check_leakage(fold, train_p, test_p, vocab, idf)
            if "baseline_tf" in methods:
                tf_vocab = build_vocab(streams, hp.min_count)
                _check_leakage(fold, train_p, test_p, tf_vocab, None)
            for method, tc in cells:
                if method == "baseline_tf":
                    X_train = sparse_matrix(train_p, tf_vocab)
                    X_test = sparse_matrix(test_p, tf_vocab)
                    oov = ~X_test.any(axis=1)
                    fold_vocab = len(tf_vocab)
                else:
                    X_train, _ = vectorize(train_p, embedding, method, idf)
                    X_test, oov = vectorize(test_p, embedding, method, idf)
                    fold_vocab = len(vocab)
                clf = train(X_train, y_train,
                            replace(tc, seed=derive_seed(seed, f"clf/{tc.algorithm}/fold{fold}")))
                y_pred, _ = predict(clf, X_test)
                results[(method, tc.algorithm)].append(FoldResult(
                    index=fold, n_train=len(train_p), n_test=len(test_p), vocab_size=fold_vocab,
                    confusion=ConfusionCounts.from_predictions(y_test, y_pred),
                    oov_test_profiles=int(np.sum(oov))))
        except ProfvecError as exc:
            exc.args = (f"fold {fold}: {exc}",) + exc.args[1:]
            raise
        if on_fold is not None:
            on_fold(fold)

    reports = []
    for method, tc in cells:
        descriptor = {
            "method": method,
            "algorithm": tc.algorithm,
            "folds": fold_plan.k,
            "stratified": fold_plan.stratified,
            "seed": seed,
            "require_all_channels": require_all_channels,
            "n_profiles": len(by_id),
            "hyperparams": {k: v for k, v in hp.to_dict().items() if k != "seed"},
            "train_config": {k: v for k, v in asdict(tc).items() if k != "seed"},
        }
        reports.append(EvaluationReport(descriptor, results[(method, tc.algorithm)]))
    return reports


def run_cv(profiles, preprocess_config: PreprocessConfig | None, hp: Hyperparams, method: str,
           train_config: TrainConfig, fold_plan: FoldPlan | None = None, **kwargs) -> EvaluationReport:
    return run_cv_grid(profiles, preprocess_config, hp, [method], [train_config], fold_plan,
                       **kwargs)[0]

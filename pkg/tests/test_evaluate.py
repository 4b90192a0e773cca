import json
import logging
import random

import numpy as np
import pytest

from profvec.embed import Hyperparams, Vocabulary
from profvec.errors import DegenerateLabelsError, LeakageError, ValidationError
from profvec.evaluate import (
    ConfusionCounts, EvaluationReport, FoldResult, _check_leakage, compute_metrics, harmonic_f1,
    make_folds, read_reports, relative_improvement, render_report, render_table, run_cv,
    run_cv_grid, write_reports,
)
from profvec.ingest import Label, ProfileRecord, SynthSpec, demo_synth_spec, synthesize_profiles
from profvec.model import TrainConfig
from profvec.preprocess import PreprocessConfig, TokenizedProfile, preprocess_profile

SMALL_HP = Hyperparams(dim=10, min_count=1, epochs=2, table_size=10_000)


def _labels(n_pos, n_neg):
    out = {f"p{i:04d}": Label.GANG for i in range(n_pos)}
    out.update({f"n{i:04d}": Label.NON_GANG for i in range(n_neg)})
    return out


def test_fold_sizes_full_scale():
    plan = make_folds(_labels(400, 2865), k=10, seed=3)
    for fold in range(10):
        test = plan.test_ids(fold)
        pos = sum(pid.startswith("p") for pid in test)
        assert pos == 40
        assert len(test) - pos in (286, 287)
    assert sorted(plan.assignment) == sorted(_labels(400, 2865))


def test_fold_errors_and_determinism():
    with pytest.raises(ValidationError):
        make_folds(_labels(5, 5), k=1)
    with pytest.raises(ValidationError):
        make_folds(_labels(3, 50), k=4)
    with pytest.raises(DegenerateLabelsError):
        make_folds(_labels(0, 50), k=4)
    assert make_folds(_labels(30, 70), 5, seed=1) == make_folds(_labels(30, 70), 5, seed=1)
    assert make_folds(_labels(30, 70), 5, seed=1) != make_folds(_labels(30, 70), 5, seed=2)


def test_unstratified_folds_partition():
    plan = make_folds(_labels(13, 29), k=4, seed=0, stratify=False)
    sizes = sorted(len(plan.test_ids(f)) for f in range(4))
    assert sum(sizes) == 42 and sizes[-1] - sizes[0] <= 1


def test_compute_metrics_examples(caplog):
    m = compute_metrics(ConfusionCounts(tp=5, fp=5, tn=0, fn=0))["gang"]
    assert (m.precision, m.recall) == (0.5, 1.0)
    assert m.f1 == pytest.approx(2 / 3)
    with caplog.at_level(logging.WARNING):
        both = compute_metrics(ConfusionCounts(tp=0, fp=0, tn=10, fn=0))
    assert (both["gang"].precision, both["gang"].recall, both["gang"].f1) == (0.0, 0.0, 0.0)
    assert (both["non_gang"].precision, both["non_gang"].recall, both["non_gang"].f1) == (1.0, 1.0, 1.0)
    assert caplog.records
    assert harmonic_f1(0.8490, 0.7327) == pytest.approx(0.7866, abs=1e-4)


def test_metric_identities_on_random_confusions():
    rng = np.random.default_rng(0)
    for _ in range(25):
        tp, fp, tn, fn = (int(x) for x in rng.integers(0, 50, size=4))
        c = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
        m = compute_metrics(c)
        assert m["gang"].recall == (tp / (tp + fn) if tp + fn else 0.0)
        assert m["non_gang"].recall == (tn / (tn + fp) if tn + fp else 0.0)
        assert m["gang"].precision == (tp / (tp + fp) if tp + fp else 0.0)
        assert m["gang"].f1 == harmonic_f1(m["gang"].precision, m["gang"].recall)


def test_relative_improvement_ratio():
    def one(tp, fp, fn):
        return EvaluationReport({"method": "m", "algorithm": "a"},
                                [FoldResult(0, 1, 1, 1, ConfusionCounts(tp=tp, fp=fp, tn=1, fn=fn))])
    better, worse = one(8, 2, 2), one(6, 4, 4)
    assert relative_improvement(better, worse) == pytest.approx(0.8 / 0.6 - 1)


def _report(folds):
    return EvaluationReport({"method": "avg_sum_count", "algorithm": "logreg"}, folds)


def test_render_report_cases(tmp_path):
    with pytest.raises(ValidationError, match="no folds"):
        render_report(_report([]), "table")
    one = _report([FoldResult(0, 9, 10, 5, ConfusionCounts(tp=3, fp=1, tn=5, fn=1))])
    assert one.pooled == one.macro
    assert render_table([one], "pooled").splitlines()[-1] == render_table([one], "macro").splitlines()[-1]
    with pytest.raises(ValidationError):
        render_report(one, "yaml")
    two = _report([FoldResult(0, 9, 10, 5, ConfusionCounts(tp=3, fp=1, tn=5, fn=1)),
                   FoldResult(1, 9, 10, 5, ConfusionCounts(tp=1, fp=0, tn=6, fn=3))])
    assert EvaluationReport.from_dict(json.loads(render_report(two, "json"))["runs"][0]) == two
    write_reports([one, two], tmp_path / "r.json")
    assert read_reports(tmp_path / "r.json") == [one, two]


def test_report_rejects_tampered_metrics():
    doc = _report([FoldResult(0, 9, 10, 5, ConfusionCounts(tp=3, fp=1, tn=5, fn=1))]).to_dict()
    doc["folds"][0]["metrics"]["gang"]["precision"] = 0.9
    with pytest.raises(ValidationError):
        EvaluationReport.from_dict(doc)


def test_leakage_guard_detects_test_only_tokens():
    train = [TokenizedProfile("a", Label.GANG, {"tweets": ("x", "y")})]
    test = [TokenizedProfile("b", Label.NON_GANG, {"tweets": ("y", "secret")})]
    _check_leakage(0, train, test, Vocabulary(("x", "y"), np.array([1, 1]), 1), None)
    with pytest.raises(LeakageError, match="secret"):
        _check_leakage(0, train, test, Vocabulary(("x", "secret"), np.array([1, 1]), 1), None)


def _tagged_profiles(n_pos=12, n_neg=28):
    spec = SynthSpec(n_pos=n_pos, n_neg=n_neg, vocab_pos=("hood", "drill"), vocab_neg=("beach", "coffee"),
                     vocab_shared=("today", "time", "friend"), seed=4)
    out = []
    for rec in synthesize_profiles(spec).records:
        # every profile carries a private token that only its own fold could see in test
        out.append(ProfileRecord(rec.id, rec.label, description=f"uniq{rec.id.replace('-', '')}",
                                 tweets=rec.tweets))
    return out


def test_leakage_probe_vocab_built_from_training_only():
    profiles = _tagged_profiles()
    cfg = PreprocessConfig(stem=False)
    report = run_cv(profiles, cfg, SMALL_HP, "avg", TrainConfig("logreg"), folds=4, seed=2)
    plan = make_folds({p.id: p.label for p in profiles}, 4, 2)

    tok = {p.id: set(preprocess_profile(p, cfg).merged_tokens) for p in profiles}
    for fold in report.folds:
        train_vocab = set().union(*(tok[i] for i in plan.train_ids(fold.index)))
        assert fold.vocab_size == len(train_vocab)


def test_order_independence_and_partition():
    profiles = _tagged_profiles()
    a = run_cv(profiles, None, SMALL_HP, "sum_tfidf", TrainConfig("svm"), folds=4, seed=5)
    shuffled = list(profiles)
    random.Random(1).shuffle(shuffled)
    b = run_cv(shuffled, None, SMALL_HP, "sum_tfidf", TrainConfig("svm"), folds=4, seed=5)
    assert a.to_dict() == b.to_dict()
    assert sum(f.n_test for f in a.folds) == len(profiles)
    assert a.pooled_confusion.total == len(profiles)


def test_errors_carry_fold_index():
    profiles = _tagged_profiles()
    with pytest.raises(Exception, match=r"^fold \d+: "):
        run_cv(profiles, None, Hyperparams(dim=5, min_count=10_000), "avg", TrainConfig(), folds=3)


@pytest.fixture(scope="module")
def demo_grid():
    profiles = synthesize_profiles(demo_synth_spec(seed=7, n_pos=60, n_neg=440)).records
    hp = Hyperparams(dim=50)
    return run_cv_grid(profiles, PreprocessConfig(), hp, ["avg_sum_count"],
                       [TrainConfig(a) for a in ("logreg", "svm", "random_forest")], seed=7)


def test_planted_signal_reaches_target_f1(demo_grid):
    logreg = demo_grid[0]
    assert logreg.descriptor["algorithm"] == "logreg"
    assert logreg.pooled["gang"].f1 >= 0.95


def test_no_algorithm_collapses_to_majority(demo_grid):
    for report in demo_grid:
        assert report.pooled["gang"].f1 > 0, report.label

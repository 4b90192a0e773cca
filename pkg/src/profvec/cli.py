"""Command-line entry point: ``profvec <command> [options]``.

Settings resolve as command-line flag > config file > built-in default.
Every random choice derives from ``--seed`` through :func:`derive_seed`.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import FORMAT_VERSIONS, __version__
from .embed import Hyperparams, load_embeddings, most_similar, save_embeddings, train_skipgram
from .errors import ProfvecError, ValidationError
from .evaluate import read_reports, relative_improvement, render_table, run_cv_grid, write_reports
from .features import (
    DENSE_METHODS, METHODS, baseline_tf_vector, build_idf, load_idf, read_features, save_idf,
    vectorize, write_dense_features, write_sparse_features,
)
from .ingest import (
    Label, SynthSpec, attach_image_tags, demo_synth_spec, load_profiles, load_tags,
    synthesize_profiles, write_profiles,
)
from .model import ALGO_ALIASES, TrainConfig, load_model, predict, save_model, train
from .preprocess import PreprocessConfig, load_tokenized, preprocess_collection, write_tokenized
from .seeding import derive_seed

log = logging.getLogger("profvec")

ALGO_CHOICES = ("logreg", "lr", "svm", "random_forest", "rf")
DEMO_DIM = 50


@dataclass
class RunConfig:
    """Everything one cross-validation run needs, resolved from flags and files."""

    profiles: Path
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    method: str = "avg_sum_count"
    folds: int = 10
    stratify: bool = True
    seed: int = 0
    tags: Path | None = None


def _read_flat_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or any(isinstance(v, (dict, list)) for v in obj.values()):
        raise ValidationError(f"{path}: config must be a flat JSON object")
    return obj


_EMBED_FLAGS = {
    "dim": "dim", "window": "window", "negatives": "negatives", "min_count": "min_count",
    "epochs": "epochs", "lr": "initial_lr", "table_size": "table_size",
    "dynamic_window": "dynamic_window",
}


def _hyperparams(args, seed_label: str, defaults: dict | None = None) -> Hyperparams:
    values = dict(defaults or {})
    values.update(_read_flat_config(getattr(args, "embed_config", None)))
    for flag, key in _EMBED_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    values["seed"] = derive_seed(args.seed, seed_label)
    return Hyperparams.from_dict(values)


def _train_config(args, algorithm: str) -> TrainConfig:
    values = {"algorithm": algorithm}
    for flag, key in (("l2", "l2_strength"), ("max_iters", "max_iters"), ("trees", "trees"),
                      ("max_depth", "max_depth")):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return TrainConfig(**values)


def _preprocess_config(args) -> PreprocessConfig:
    path = getattr(args, "preprocess_config", None) or getattr(args, "config", None)
    return PreprocessConfig.from_file(path) if path else PreprocessConfig()


def _load_raw(args):
    profiles = load_profiles(args.profiles)
    if getattr(args, "tags", None):
        profiles = attach_image_tags(profiles, load_tags(args.tags))
    return profiles


# --- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    profiles = _load_raw(args)
    gang, non_gang, unlabeled = profiles.counts
    print(f"{len(profiles)} profiles: gang={gang} non_gang={non_gang} unlabeled={unlabeled}")
    if args.out:
        write_profiles(profiles, args.out)
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        spec = SynthSpec.from_dict(_read_json_object(args.spec))
        spec = replace(spec, seed=args.seed) if args.seed is not None else spec
    else:
        spec = demo_synth_spec(seed=args.seed if args.seed is not None else 7)
    profiles = synthesize_profiles(spec)
    write_profiles(profiles, args.out)
    gang, non_gang, _ = profiles.counts
    print(f"wrote {len(profiles)} profiles (gang={gang}, non_gang={non_gang}) to {args.out}")
    return 0


def _read_json_object(path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: synth spec must be a JSON object")
    return obj


def cmd_preprocess(args) -> int:
    profiles = _load_raw(args)
    tokenized = preprocess_collection(profiles, _preprocess_config(args))
    write_tokenized(tokenized, args.out)
    print(f"wrote {len(tokenized)} tokenized profiles to {args.out}")
    return 0


def cmd_train_embed(args) -> int:
    profiles = load_tokenized(args.profiles)
    hp = _hyperparams(args, "embed")
    model = train_skipgram([p.merged_tokens for p in profiles], hp, workers=args.workers)
    save_embeddings(model, args.out)
    print(f"wrote {len(model.vocab)} x {model.dim} embeddings to {args.out}")
    return 0


def cmd_nearest(args) -> int:
    model = load_embeddings(args.model)
    for token, sim in most_similar(model, args.token, args.top):
        print(f"{token}\t{sim:.6f}")
    return 0


def cmd_vectorize(args) -> int:
    profiles = load_tokenized(args.profiles)
    model = load_embeddings(args.model)
    ids = [p.id for p in profiles]
    labels = [p.label for p in profiles]
    if args.method == "baseline_tf":
        maps = [baseline_tf_vector(p, model.vocab).sparse for p in profiles]
        write_sparse_features(args.out, ids, labels, maps)
    else:
        idf = None
        if args.method == "sum_tfidf":
            if not args.idf:
                raise ValidationError("--idf is required for sum_tfidf")
            if args.fit_idf:
                training = [p for p in profiles if p.label is not Label.UNLABELED]
                idf = build_idf(training, model.vocab)
                save_idf(idf, args.idf)
            else:
                idf = load_idf(args.idf)
        matrix, oov = vectorize(profiles, model, args.method, idf)
        write_dense_features(args.out, ids, labels, matrix)
        if oov.any():
            log.warning("%d profile(s) had no in-vocabulary tokens", int(oov.sum()))
    print(f"wrote {len(profiles)} {args.method} vectors to {args.out}")
    return 0


def cmd_train_clf(args) -> int:
    table = read_features(args.features)
    keep = [i for i, lab in enumerate(table.labels) if lab is not Label.UNLABELED]
    X = table.matrix[keep]
    y = np.array([table.labels[i] is Label.GANG for i in keep], dtype=np.int64)
    config = replace(_train_config(args, args.algo), seed=derive_seed(args.seed, "clf"))
    model = train(X, y, config)
    model.feature_names = table.feature_names
    save_model(model, args.out)
    status = "converged" if model.converged else "stopped at max_iters"
    if model.algorithm == "random_forest":
        status = f"{len(model.trees)} trees"
    print(f"trained {model.algorithm} on {X.shape[0]} x {X.shape[1]} ({status}); wrote {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.clf)
    table = read_features(args.features, model.feature_names)
    labels, scores = predict(model, table.matrix)
    with Path(args.out).open("w", encoding="utf-8", newline="\n") as out:
        for pid, lab, score in zip(table.ids, labels, scores):
            name = Label.GANG.value if lab else Label.NON_GANG.value
            out.write(f"{pid}\t{name}\t{float(score)!r}\n")
    print(f"wrote {len(table.ids)} predictions to {args.out}")
    return 0


def _run_config(args) -> RunConfig:
    for name in ("profiles", "tags", "preprocess_config", "embed_config"):
        path = getattr(args, name, None)
        if path and not Path(path).is_file():
            raise FileNotFoundError(f"{name.replace('_', '-')} file not found: {path}")
    return RunConfig(
        profiles=Path(args.profiles),
        hyperparams=_hyperparams(args, "embed"),
        preprocess=_preprocess_config(args),
        train=_train_config(args, args.algo),
        method=args.method,
        folds=args.folds,
        stratify=not args.no_stratify,
        seed=args.seed,
        tags=Path(args.tags) if args.tags else None,
    )


def cmd_cv(args) -> int:
    run = _run_config(args)
    profiles = _load_raw(args)
    reports = run_cv_grid(
        profiles, run.preprocess, run.hyperparams, [run.method], [run.train],
        folds=run.folds, seed=run.seed, stratify=run.stratify,
        require_all_channels=args.require_all_channels, workers=args.workers,
    )
    if args.report:
        write_reports(reports, args.report)
    table = render_table(reports, args.scope)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_demo(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = synthesize_profiles(demo_synth_spec(seed=args.seed))
    write_profiles(profiles, out_dir / "profiles.jsonl")
    config = PreprocessConfig()
    write_tokenized(preprocess_collection(profiles, config), out_dir / "tokenized.jsonl")
    hp = _hyperparams(args, "embed", defaults={"dim": DEMO_DIM})
    algos = [TrainConfig(a) for a in ("logreg", "random_forest", "svm")]
    common = dict(folds=args.folds, seed=args.seed, workers=args.workers)
    reports = run_cv_grid(profiles, config, hp, list(DENSE_METHODS), algos, **common)
    baselines = [
        run_cv_grid(profiles, config, hp, ["baseline_tf"], [TrainConfig("random_forest")],
                    **common)[0],
        run_cv_grid(profiles, config, hp, ["baseline_tf"], [TrainConfig("random_forest")],
                    require_all_channels=True, **common)[0],
    ]
    runs = baselines + reports
    best = next(r for r in reports
                if r.descriptor["method"] == "avg_sum_count" and r.descriptor["algorithm"] == "logreg")
    extra = {"improvement_over_baseline": {
        "run": best.label,
        "baseline_model_1": relative_improvement(best, baselines[0]),
        "baseline_model_2": relative_improvement(best, baselines[1]),
    }}
    write_reports(runs, out_dir / "report.json", extra)
    table = render_table(runs, "pooled") + "\n" + render_table(runs, "macro")
    (out_dir / "table.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    imp = extra["improvement_over_baseline"]
    print(f"\n{best.label} gang F1 vs Baseline Model(1): {imp['baseline_model_1']:+.2%}, "
          f"vs Baseline Model(2): {imp['baseline_model_2']:+.2%}")
    return 0


def cmd_report(args) -> int:
    reports = read_reports(args.report)
    print(render_table(reports, args.scope), end="")
    return 0


# --- parser ------------------------------------------------------------------

def _version_text() -> str:
    formats = ", ".join(f"{k} v{v}" for k, v in FORMAT_VERSIONS.items())
    return f"profvec {__version__} (formats: {formats})"


def _add_embed_flags(p):
    p.add_argument("--embed-config", help="flat JSON file of embedding hyperparameters")
    p.add_argument("--dim", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--table-size", type=int)
    p.add_argument("--dynamic-window", action="store_true", default=None)


def _add_clf_flags(p):
    p.add_argument("--l2", type=float, help="L2 strength (logreg/svm)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="profvec", description="Skip-gram profile embeddings and gang vs non-gang profile classification.")
    parser.add_argument("--version", action="version", version=_version_text())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        return p

    p = command("ingest", cmd_ingest, "load and validate a profiles file")
    p.add_argument("--profiles", required=True)
    p.add_argument("--tags", help="image tags file to merge in")
    p.add_argument("--validate", action="store_true", help="validate only (the default)")
    p.add_argument("--out", help="write the (tag-enriched) profiles here")

    p = command("synth", cmd_synth, "generate a synthetic labeled collection")
    p.add_argument("--spec", help="JSON synth spec (default: the demo spec)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = command("preprocess", cmd_preprocess, "tokenize profiles")
    p.add_argument("--profiles", required=True)
    p.add_argument("--config", help="preprocess config JSON")
    p.add_argument("--tags")
    p.add_argument("--out", required=True)

    p = command("train-embed", cmd_train_embed, "train skip-gram embeddings")
    p.add_argument("--profiles", required=True, help="tokenized profiles file")
    _add_embed_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = command("nearest", cmd_nearest, "nearest neighbours of a token")
    p.add_argument("--model", required=True)
    p.add_argument("--token", required=True)
    p.add_argument("--top", type=int, default=10)

    p = command("vectorize", cmd_vectorize, "profile feature vectors")
    p.add_argument("--profiles", required=True, help="tokenized profiles file")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=METHODS, default="avg_sum_count")
    p.add_argument("--idf", help="idf table (token<TAB>idf)")
    p.add_argument("--fit-idf", action="store_true",
                   help="compute idf from the labeled input profiles and write it to --idf")
    p.add_argument("--out", required=True)

    p = command("train-clf", cmd_train_clf, "train a classifier on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--algo", choices=ALGO_CHOICES, default="logreg")
    _add_clf_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("predict", cmd_predict, "score a feature file")
    p.add_argument("--clf", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = command("cv", cmd_cv, "k-fold cross validation of the full pipeline")
    p.add_argument("--profiles", required=True, help="raw profiles file")
    p.add_argument("--tags")
    p.add_argument("--preprocess-config")
    p.add_argument("--method", choices=METHODS, default="avg_sum_count")
    p.add_argument("--algo", choices=ALGO_CHOICES, default="logreg")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--require-all-channels", action="store_true",
                   help="keep only profiles with all five channels (baseline Model(2))")
    p.add_argument("--scope", choices=("pooled", "macro"), default="pooled")
    p.add_argument("--workers", type=int, default=1)
    _add_embed_flags(p)
    _add_clf_flags(p)
    p.add_argument("--report")
    p.add_argument("--table")

    p = command("demo", cmd_demo, "synthetic end-to-end run over every method and classifier")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="demo_out")
    _add_embed_flags(p)

    p = command("report", cmd_report, "render a saved report as a table")
    p.add_argument("--report", required=True)
    p.add_argument("--scope", choices=("pooled", "macro"), default="pooled")
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "algo", None):
        args.algo = ALGO_ALIASES.get(args.algo, args.algo)
    try:
        return args.func(args)
    except (ProfvecError, OSError, ValueError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"profvec {args.command}: error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

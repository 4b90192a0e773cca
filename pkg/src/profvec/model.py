"""Binary classifiers: logistic regression, linear SVM and random forest.

Labels are encoded ``1 = gang`` (positive) and ``0 = non_gang``.

Both linear models minimize a mean loss plus ``l2_strength / (2 n) * |w|^2``,
i.e. the usual ``0.5 |w|^2 + C * sum(loss)`` objective with
``C = 1 / l2_strength`` divided through by ``n``. Logistic regression leaves
the bias unpenalized; the SVM penalizes it like a weight on a constant
feature.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import FORMAT_VERSIONS
from .errors import DegenerateLabelsError, DimensionError, ParseError, ValidationError

ALGORITHMS = ("logreg", "svm", "random_forest")
ALGO_ALIASES = {"lr": "logreg", "rf": "random_forest"}
MODEL_FORMAT = "profvec-classifier"


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "logreg"
    l2_strength: float = 1.0
    max_iters: int = 1000
    tolerance: float = 1e-6
    trees: int = 100
    max_depth: int | None = None
    features_per_split: int | None = None  # None -> ceil(sqrt(d))
    seed: int = 0

    def __post_init__(self):
        algo = ALGO_ALIASES.get(self.algorithm, self.algorithm)
        if algo not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}")
        object.__setattr__(self, "algorithm", algo)
        if self.l2_strength < 0 or self.max_iters < 1 or self.trees < 1 or not self.tolerance > 0:
            raise ValidationError("invalid training configuration")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValidationError("features_per_split must be >= 1")


@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    proba: np.ndarray  # gang-class probability at each node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.proba[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "proba": self.proba.tolist(),
        }

    @classmethod
    def from_dict(cls, obj) -> "Tree":
        tree = cls(
            feature=np.array(obj["feature"], dtype=np.int64),
            threshold=np.array(obj["threshold"], dtype=np.float64),
            left=np.array(obj["left"], dtype=np.int64),
            right=np.array(obj["right"], dtype=np.int64),
            proba=np.array(obj["proba"], dtype=np.float64),
        )
        sizes = {a.shape[0] for a in (tree.feature, tree.threshold, tree.left, tree.right, tree.proba)}
        if len(sizes) != 1:
            raise ValidationError("tree arrays differ in length")
        return tree


@dataclass
class TrainedModel:
    algorithm: str
    n_features: int
    config: TrainConfig
    weights: np.ndarray | None = None
    bias: float = 0.0
    trees: list[Tree] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    feature_names: list[str] | None = None

    def leaf_probabilities(self, tree: Tree) -> np.ndarray:
        """Per-leaf [non_gang, gang] probabilities (each row sums to 1)."""
        leaves = tree.feature < 0
        p = tree.proba[leaves]
        return np.column_stack((1.0 - p, p))


# --- logistic regression -----------------------------------------------------

def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _expit(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logreg_loss(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    n = X.shape[0]
    z = X @ w + b
    return float(np.mean(_log1pexp(z) - y * z) + l2 / (2 * n) * (w @ w))


def logreg_gradient(w, b, X, y, l2):
    n = X.shape[0]
    r = _expit(X @ w + b) - y
    return X.T @ r / n + l2 / n * w, float(r.mean())


def _fit_logreg(X, y, config: TrainConfig) -> TrainedModel:
    """Full-batch gradient descent with Armijo backtracking.

    The trial step doubles after every accepted step and halves on each
    rejection, so the iteration adapts to the local curvature."""
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    l2 = config.l2_strength
    step = 1.0
    loss = logreg_loss(w, b, X, y, l2)
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        gw, gb = logreg_gradient(w, b, X, y, l2)
        gnorm2 = float(gw @ gw + gb * gb)
        if math.sqrt(gnorm2) <= config.tolerance:
            converged = True
            it -= 1
            break
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            new_loss = logreg_loss(w_new, b_new, X, y, l2)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-16:
                break
            step *= 0.5
        w, b, loss = w_new, b_new, new_loss
        step *= 2.0
    else:
        gw, gb = logreg_gradient(w, b, X, y, l2)
        converged = math.sqrt(float(gw @ gw + gb * gb)) <= config.tolerance
    return TrainedModel("logreg", d, config, weights=w, bias=float(b), iterations=it,
                        converged=converged)


# --- linear SVM --------------------------------------------------------------

def svm_objective(w, b, X, y, l2) -> float:
    n = X.shape[0]
    s = 2.0 * y - 1.0
    margins = 1.0 - s * (X @ w + b)
    return float(np.maximum(margins, 0.0).mean() + l2 / (2 * n) * (w @ w + b * b))


def svm_subgradient(w, b, X, y, l2):
    n = X.shape[0]
    s = 2.0 * y - 1.0
    active = (s * (X @ w + b)) < 1.0
    coef = np.where(active, -s, 0.0) / n
    return X.T @ coef + l2 / n * w, float(coef.sum()) + l2 / n * b


def _fit_svm(X, y, config: TrainConfig) -> TrainedModel:
    """Deterministic subgradient descent on the hinge objective.

    Pegasos schedule: step ``1 / (lam * (t + 1))`` with ``lam = l2_strength / n``
    the strong-convexity constant, followed by projection onto the ball
    ``|(w, b)| <= 1 / sqrt(lam)``, which contains the optimum. Returns the mean
    of the second half of the iterates, or the last iterate if that scores
    a lower objective.
    """
    n, d = X.shape
    l2 = config.l2_strength if config.l2_strength > 0 else 1e-8
    lam = l2 / n
    radius = 1.0 / math.sqrt(lam)
    w = np.zeros(d)
    b = 0.0
    avg_w = np.zeros(d)
    avg_b = 0.0
    n_avg = 0
    burn_in = config.max_iters // 2
    it = 0
    converged = False
    for it in range(1, config.max_iters + 1):
        gw, gb = svm_subgradient(w, b, X, y, l2)
        if math.sqrt(float(gw @ gw + gb * gb)) <= config.tolerance:
            converged = True
            break
        eta = 1.0 / (lam * (it + 1))
        w = w - eta * gw
        b = b - eta * gb
        norm = math.sqrt(float(w @ w + b * b))
        if norm > radius:
            w *= radius / norm
            b *= radius / norm
        if it > burn_in:
            n_avg += 1
            avg_w += (w - avg_w) / n_avg
            avg_b += (b - avg_b) / n_avg
    if n_avg and svm_objective(avg_w, avg_b, X, y, l2) <= svm_objective(w, b, X, y, l2):
        w, b = avg_w, avg_b
    return TrainedModel("svm", d, config, weights=np.array(w), bias=float(b),
                        iterations=it, converged=converged)


# --- random forest -----------------------------------------------------------

def _best_split(x: np.ndarray, y: np.ndarray):
    """Lowest weighted-Gini threshold on one feature, or None if constant."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.shape[0]
    valid = np.flatnonzero(xs[1:] != xs[:-1])
    if valid.size == 0:
        return None
    pos_left = np.cumsum(ys)[valid]
    n_left = valid + 1.0
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    gini = n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)
    j = int(np.argmin(gini))
    cut = valid[j]
    threshold = 0.5 * (xs[cut] + xs[cut + 1])
    if threshold == xs[cut + 1]:
        threshold = xs[cut]
    return float(gini[j]) / n, float(threshold)


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _column_keys(X: np.ndarray) -> np.ndarray:
    """64-bit content hash per column, so feature draws follow the data rather
    than the column position (forests are equivariant under column permutation)."""
    keys = [int.from_bytes(hashlib.blake2b(np.ascontiguousarray(X[:, f]).tobytes(),
                                           digest_size=8).digest(), "little")
            for f in range(X.shape[1])]
    return np.array(keys, dtype=np.uint64)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return x ^ (x >> np.uint64(31))


def _grow_tree(X, y, rng: np.random.Generator, mtry: int, max_depth, keys: np.ndarray) -> Tree:
    feature, threshold, left, right, proba = [], [], [], [], []

    def new_node(p):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        proba.append(p)
        return len(feature) - 1

    root = new_node(float(y.mean()))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        pos = ys.sum()
        if pos == 0 or pos == ys.shape[0] or (max_depth is not None and depth >= max_depth):
            continue
        best = None
        salt = np.uint64(rng.integers(0, 2**63))
        perm = np.argsort(_splitmix64(keys ^ salt), kind="stable")
        # like common CART implementations, keep drawing features past mtry
        # until at least one non-constant candidate has been seen
        for rank, f in enumerate(perm):
            if rank >= mtry and best is not None:
                break
            found = _best_split(X[rows, f], ys)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            continue
        _, f, thr = best
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(float(y[lrows].mean()))
        right[node] = new_node(float(y[rrows].mean()))
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(proba))


def _fit_forest(X, y, config: TrainConfig) -> TrainedModel:
    n, d = X.shape
    mtry = config.features_per_split or max(1, math.ceil(math.sqrt(d)))
    mtry = min(mtry, d)
    # one child seed per tree: the forest does not depend on fitting order
    children = np.random.SeedSequence(config.seed).spawn(config.trees)
    keys = _column_keys(X)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        sample = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[sample], y[sample], rng, mtry, config.max_depth, keys))
    return TrainedModel("random_forest", d, config, trees=trees, converged=True)


# --- public API --------------------------------------------------------------

def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError("X must be a non-empty 2-D matrix")
    if y.shape != (X.shape[0],):
        raise DimensionError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValidationError("labels must be encoded as 0/1")
    if y.min() == y.max():
        raise DegenerateLabelsError()
    if not np.all(np.isfinite(X)):
        raise ValidationError("X contains non-finite values")
    return X, y


def train(X, y, config: TrainConfig) -> TrainedModel:
    X, y = _check_xy(X, y)
    if config.algorithm == "logreg":
        return _fit_logreg(X, y, config)
    if config.algorithm == "svm":
        return _fit_svm(X, y, config)
    return _fit_forest(X, y, config)


def decision_scores(model: TrainedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got shape {X.shape}")
    if model.algorithm == "random_forest":
        total = np.zeros(X.shape[0])
        for tree in model.trees:
            total += tree.predict_proba(X)
        return total / len(model.trees)
    z = X @ model.weights + model.bias
    return _expit(z) if model.algorithm == "logreg" else z


def predict(model: TrainedModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Return (labels as 0/1, scores).

    Scores are probabilities for logreg and the forest, margins for the SVM.
    A score exactly on the threshold is labeled non_gang.
    """
    scores = decision_scores(model, X)
    threshold = 0.0 if model.algorithm == "svm" else 0.5
    return (scores > threshold).astype(np.int64), scores


# --- persistence -------------------------------------------------------------

def model_to_dict(model: TrainedModel) -> dict:
    obj = {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSIONS["model"],
        "algorithm": model.algorithm,
        "n_features": model.n_features,
        "classes": ["non_gang", "gang"],
        "config": asdict(model.config),
        "iterations": model.iterations,
        "converged": model.converged,
        "feature_names": model.feature_names,
    }
    if model.algorithm == "random_forest":
        obj["trees"] = [t.to_dict() for t in model.trees]
    else:
        obj["weights"] = model.weights.tolist()
        obj["bias"] = model.bias
    return obj


def model_from_dict(obj: Mapping) -> TrainedModel:
    if not isinstance(obj, Mapping) or obj.get("format") != MODEL_FORMAT:
        raise ValidationError("not a classifier model file")
    if obj.get("version") != FORMAT_VERSIONS["model"]:
        raise ValidationError(
            f"model format version {obj.get('version')!r} unsupported "
            f"(expected {FORMAT_VERSIONS['model']})")
    try:
        config = TrainConfig(**obj["config"])
        model = TrainedModel(
            algorithm=obj["algorithm"], n_features=int(obj["n_features"]), config=config,
            iterations=int(obj["iterations"]), converged=bool(obj["converged"]),
            feature_names=obj.get("feature_names"),
        )
        if model.algorithm == "random_forest":
            model.trees = [Tree.from_dict(t) for t in obj["trees"]]
            if not model.trees:
                raise ValidationError("forest has no trees")
        else:
            model.weights = np.array(obj["weights"], dtype=np.float64)
            model.bias = float(obj["bias"])
            if model.weights.shape != (model.n_features,):
                raise ValidationError("weight vector length does not match n_features")
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed model file: {exc}") from None
    return model


def save_model(model: TrainedModel, path) -> None:
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model file ({exc.msg})", path, exc.lineno) from None
    return model_from_dict(obj)

import json

import numpy as np
import pytest

from profvec.errors import DegenerateLabelsError, DimensionError, ParseError, ValidationError
from profvec.model import (
    Tree, TrainConfig, TrainedModel, decision_scores, load_model, logreg_gradient, logreg_loss,
    model_to_dict, predict, save_model, train,
)

TOY_X = np.array([[-2.0, 1.0], [-1.0, -1.0], [1.0, 1.0], [2.0, -1.0]])
TOY_Y = np.array([0, 0, 1, 1])
XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] * 5)
XOR_Y = np.array([0, 1, 1, 0] * 5)


@pytest.mark.parametrize("algo", ["logreg", "svm", "random_forest"])
def test_separable_toy_set(algo):
    model = train(TOY_X, TOY_Y, TrainConfig(algo, l2_strength=0.01, trees=10))
    labels, _ = predict(model, TOY_X)
    assert labels.tolist() == TOY_Y.tolist()


def test_svm_boundary_sign_matches_logreg():
    lr = train(TOY_X, TOY_Y, TrainConfig("logreg", l2_strength=0.01))
    svm = train(TOY_X, TOY_Y, TrainConfig("svm", l2_strength=0.01))
    grid = np.array([[x, y] for x in (-3, -1, 1, 3) for y in (-1, 0, 1)], dtype=float)
    assert np.array_equal(decision_scores(lr, grid) > 0.5, decision_scores(svm, grid) > 0)
    assert np.sign(lr.weights[0]) == np.sign(svm.weights[0]) == 1


def test_xor_forest_beats_linear():
    rf = train(XOR_X, XOR_Y, TrainConfig("rf", trees=50, seed=3))
    assert np.mean(predict(rf, XOR_X)[0] == XOR_Y) == 1.0
    lr = train(XOR_X, XOR_Y, TrainConfig("logreg"))
    assert np.mean(predict(lr, XOR_X)[0] == XOR_Y) <= 0.75


def test_zero_weights_tie_to_non_gang():
    model = TrainedModel("logreg", 3, TrainConfig(), weights=np.zeros(3), bias=0.0)
    labels, scores = predict(model, np.random.default_rng(0).normal(size=(5, 3)))
    assert scores.tolist() == [0.5] * 5
    assert labels.tolist() == [0] * 5


def test_forest_tie_rule():
    leaf = lambda p: Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([p]))
    model = TrainedModel("random_forest", 1, TrainConfig("rf", trees=2), trees=[leaf(0.9), leaf(0.1)])
    labels, scores = predict(model, np.zeros((1, 1)))
    assert scores[0] == pytest.approx(0.5)
    assert labels[0] == 0


def test_logreg_gradient_finite_differences():
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(20):
        n, d = int(rng.integers(5, 30)), int(rng.integers(1, 8))
        X, y = rng.normal(size=(n, d)), rng.integers(0, 2, size=n).astype(float)
        w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 2))
        gw, gb = logreg_gradient(w, b, X, y, l2)
        num = np.zeros(d + 1)
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            num[j] = (logreg_loss(w + e, b, X, y, l2) - logreg_loss(w - e, b, X, y, l2)) / (2 * h)
        num[d] = (logreg_loss(w, b + h, X, y, l2) - logreg_loss(w, b - h, X, y, l2)) / (2 * h)
        analytic = np.append(gw, gb)
        assert np.linalg.norm(analytic - num) <= 1e-5 * max(np.linalg.norm(num), 1e-8)


def test_logreg_converges_to_tolerance():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=80) > 0).astype(int)
    model = train(X, y, TrainConfig("logreg"))
    gw, gb = logreg_gradient(model.weights, model.bias, X, y, 1.0)
    assert model.converged
    assert np.linalg.norm(np.append(gw, gb)) <= 1e-6


@pytest.mark.parametrize("algo", ["logreg", "svm", "random_forest"])
def test_deterministic(algo):
    rng = np.random.default_rng(6)
    X = rng.normal(size=(60, 5))
    y = (X[:, 1] > 0).astype(int)
    a = train(X, y, TrainConfig(algo, trees=15, seed=11))
    b = train(X, y, TrainConfig(algo, trees=15, seed=11))
    assert model_to_dict(a) == model_to_dict(b)


@pytest.mark.parametrize("algo", ["logreg", "svm", "random_forest"])
def test_feature_permutation_invariance(algo):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(70, 6))
    y = (X[:, 0] - X[:, 3] + 0.3 * rng.normal(size=70) > 0).astype(int)
    perm = rng.permutation(6)
    test = rng.normal(size=(40, 6))
    base = train(X, y, TrainConfig(algo, trees=25))
    permuted = train(X[:, perm], y, TrainConfig(algo, trees=25))
    labels_a, scores_a = predict(base, test)
    labels_b, scores_b = predict(permuted, test[:, perm])
    np.testing.assert_allclose(scores_b, scores_a, rtol=1e-6, atol=1e-9)
    assert np.array_equal(labels_a, labels_b)
    if algo != "random_forest":
        np.testing.assert_allclose(permuted.weights, base.weights[perm], rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("algo", ["logreg", "svm", "random_forest"])
def test_imbalanced_signal_not_collapsed(algo):
    rng = np.random.default_rng(8)
    n_pos, n_neg = 60, 440
    X = np.vstack((rng.normal(1.5, 1.0, size=(n_pos, 4)), rng.normal(0.0, 1.0, size=(n_neg, 4))))
    y = np.array([1] * n_pos + [0] * n_neg)
    labels, _ = predict(train(X, y, TrainConfig(algo, trees=30)), X)
    tp = int(np.sum((labels == 1) & (y == 1)))
    assert tp > 0


def test_training_errors():
    with pytest.raises(DegenerateLabelsError, match="degenerate training labels"):
        train(TOY_X, np.ones(4, dtype=int), TrainConfig())
    with pytest.raises(DimensionError):
        train(TOY_X, np.array([0, 1]), TrainConfig())
    model = train(TOY_X, TOY_Y, TrainConfig())
    with pytest.raises(DimensionError):
        predict(model, np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        TrainConfig("knn")


@pytest.mark.parametrize("algo", ["logreg", "svm", "random_forest"])
def test_save_load_round_trip(tmp_path, algo):
    rng = np.random.default_rng(9)
    X = rng.normal(size=(50, 4))
    y = (X[:, 2] > 0).astype(int)
    model = train(X, y, TrainConfig(algo, trees=10))
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    probe = rng.normal(size=(30, 4))
    assert np.array_equal(predict(loaded, probe)[0], predict(model, probe)[0])
    if algo == "random_forest":
        for a, b in zip(model.trees, loaded.trees):
            assert a.to_dict() == b.to_dict()
    else:
        np.testing.assert_allclose(loaded.weights, model.weights, rtol=0, atol=1e-12)
        assert loaded.bias == model.bias


def test_leaf_probabilities_sum_to_one():
    model = train(XOR_X, XOR_Y, TrainConfig("rf", trees=5))
    for tree in model.trees:
        assert np.allclose(model.leaf_probabilities(tree).sum(axis=1), 1.0)


def test_truncated_and_mismatched_files(tmp_path):
    model = train(TOY_X, TOY_Y, TrainConfig())
    path = tmp_path / "m.json"
    save_model(model, path)
    text = path.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load_model(tmp_path / "cut.json")
    obj = json.loads(text)
    obj["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(obj))
    with pytest.raises(ValidationError, match="version"):
        load_model(tmp_path / "v.json")

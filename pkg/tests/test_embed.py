import numpy as np
import pytest

from profvec import _sgns_kernel
from profvec.embed import (
    EmbeddingModel, Hyperparams, Vocabulary, allocate_slots, build_negative_table, build_vocab,
    cosine, count_pairs, init_model, load_embeddings, most_similar, save_embeddings,
    sgns_gradients, sgns_loss, sgns_step, train_skipgram,
)
from profvec.errors import OOVError, ParseError, ValidationError, VocabularyError

from conftest import planted_streams


def _model(vocab_size, dim, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(tuple(f"t{i}" for i in range(vocab_size)), np.ones(vocab_size, dtype=np.int64), 1)
    return EmbeddingModel(vocab, rng.normal(0, scale, (vocab_size, dim)),
                          rng.normal(0, scale, (vocab_size, dim)), Hyperparams(dim=dim, min_count=1))


def test_vocab_min_count_example():
    vocab = build_vocab([["a", "a", "b"], ["a", "c"]], min_count=2)
    assert vocab.tokens == ("a",)
    assert vocab.count("a") == 3


def test_vocab_ordering_and_errors():
    vocab = build_vocab([["b", "a", "c", "a", "b", "d"]], min_count=1)
    assert vocab.tokens == ("a", "b", "c", "d")
    with pytest.raises(VocabularyError, match="no tokens meet min_count"):
        build_vocab([["a"]], min_count=2)


def test_negative_table_examples():
    vocab = build_vocab([["a"] * 4 + ["b"]], min_count=1)
    table = build_negative_table(vocab, 0.75, 10_000)
    # 4^0.75 / (4^0.75 + 1) * 10000 = 7387.96...
    assert table.slots.tolist() == [7388, 2612]
    assert build_negative_table(vocab, 1.0, 4).slots.tolist() == [3, 1]
    single = build_negative_table(build_vocab([["z", "z"]], 1), 0.75, 5)
    assert single.slots.tolist() == [5]
    with pytest.raises(ValidationError):
        allocate_slots(np.ones(3), 2)


def test_negative_table_every_token_has_a_slot():
    slots = allocate_slots(np.array([1e9, 1.0, 1.0]), 10)
    assert slots.sum() == 10 and slots.min() >= 1


def test_sgns_step_zero_lr_is_noop():
    model = _model(6, 4)
    before_in, before_out = model.input_vectors.copy(), model.output_vectors.copy()
    sgns_step(0, 1, [2, 3], 0.0, model)
    assert np.array_equal(before_in, model.input_vectors)
    assert np.array_equal(before_out, model.output_vectors)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(10):
        k, n_neg = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        v, u, un = rng.normal(size=k), rng.normal(size=k), rng.normal(size=(n_neg, k))
        d_c, d_o, d_n = sgns_gradients(v, u, un)
        for analytic, which in ((d_c, 0), (d_o, 1)):
            for j in range(k):
                args_p, args_m = [v.copy(), u.copy(), un], [v.copy(), u.copy(), un]
                args_p[which][j] += h
                args_m[which][j] -= h
                num = (sgns_loss(*args_p) - sgns_loss(*args_m)) / (2 * h)
                assert abs(num - analytic[j]) <= 1e-4 * max(1.0, abs(num))
        for i in range(n_neg):
            for j in range(k):
                p, m = un.copy(), un.copy()
                p[i, j] += h
                m[i, j] -= h
                num = (sgns_loss(v, u, p) - sgns_loss(v, u, m)) / (2 * h)
                assert abs(num - d_n[i, j]) <= 1e-4 * max(1.0, abs(num))


def test_step_raises_positive_score_and_lowers_negative():
    model = _model(5, 6, seed=1, scale=0.1)
    sig = lambda x: 1 / (1 + np.exp(-x))
    pos0 = sig(model.input_vectors[0] @ model.output_vectors[1])
    neg0 = sig(model.input_vectors[0] @ model.output_vectors[2])
    sgns_step(0, 1, [2], 0.01, model)
    assert sig(model.input_vectors[0] @ model.output_vectors[1]) > pos0
    assert sig(model.input_vectors[0] @ model.output_vectors[2]) < neg0


def test_kernel_pair_update_matches_numpy_step():
    ref = _model(8, 5, seed=2)
    fast = _model(8, 5, seed=2)
    negatives = [3, 4, 3]
    sgns_step(1, 2, negatives, 0.05, ref)
    targets = np.array([2] + negatives, dtype=np.int64)
    labels = np.array([1.0, 0.0, 0.0, 0.0])
    ok = _sgns_kernel.pair_update(fast.input_vectors, fast.output_vectors, 1, targets, labels, 4, 0.05,
                                  np.zeros(4), np.zeros(5))
    assert ok
    np.testing.assert_allclose(fast.input_vectors, ref.input_vectors, rtol=0, atol=1e-14)
    np.testing.assert_allclose(fast.output_vectors, ref.output_vectors, rtol=0, atol=1e-14)


def test_zero_epochs_returns_initialization():
    streams = planted_streams(10)
    hp = Hyperparams(dim=8, min_count=1, epochs=0, table_size=1000, seed=5)
    model = train_skipgram(streams, hp)
    assert np.array_equal(model.input_vectors, init_model(model.vocab, hp).input_vectors)


def test_training_deterministic_single_worker():
    streams = planted_streams(30)
    hp = Hyperparams(dim=10, min_count=1, epochs=2, table_size=10_000, seed=9)
    a = train_skipgram(streams, hp)
    b = train_skipgram(streams, hp)
    assert np.array_equal(a.input_vectors, b.input_vectors)
    c = train_skipgram(streams, Hyperparams(dim=10, min_count=1, epochs=2, table_size=10_000, seed=10))
    assert not np.array_equal(a.input_vectors, c.input_vectors)


def test_multi_worker_training_finishes():
    hp = Hyperparams(dim=10, min_count=1, epochs=2, table_size=10_000, seed=9)
    model = train_skipgram(planted_streams(30), hp, workers=3)
    assert np.all(np.isfinite(model.input_vectors))


def test_count_pairs_oracle():
    def brute(n, c):
        return sum(1 for t in range(n) for j in range(-c, c + 1) if j and 0 <= t + j < n)

    for n in range(0, 15):
        for c in range(1, 6):
            assert count_pairs(n, c) == brute(n, c)


def test_windows_do_not_cross_profiles():
    # "p" and "q" only ever sit in separate one-token profiles, so no pair links them
    # and their output rows are touched only as negatives of each other.
    streams = [["a", "b"]] * 50 + [["p"]] * 5 + [["q"]] * 5
    hp = Hyperparams(dim=6, min_count=1, epochs=1, table_size=1000, seed=1)
    model = train_skipgram(streams, hp)
    for tok in ("p", "q"):
        i = model.vocab.index[tok]
        assert np.array_equal(model.input_vectors[i], init_model(model.vocab, hp).input_vectors[i])


def test_planted_clusters(planted_model):
    within = cosine(planted_model.vector("x1"), planted_model.vector("x2"))
    across = cosine(planted_model.vector("x1"), planted_model.vector("y1"))
    assert within - across >= 0.2
    top = [t for t, _ in most_similar(planted_model, "x1", 2)]
    assert set(top) == {"x2", "x3"}


def test_most_similar_exclusions_ties_and_scale():
    vocab = Vocabulary(("q", "b", "a", "c"), np.ones(4, dtype=np.int64), 1)
    vecs = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [0.0, 1.0]])
    model = EmbeddingModel(vocab, vecs, None, Hyperparams(dim=2, min_count=1))
    out = most_similar(model, "q", 10)
    assert [t for t, _ in out] == ["a", "b", "c"]
    assert out[0][1] == pytest.approx(1.0)
    scaled = EmbeddingModel(vocab, vecs * 7.5, None, Hyperparams(dim=2, min_count=1))
    assert [t for t, _ in most_similar(scaled, "q", 10)] == ["a", "b", "c"]
    with pytest.raises(OOVError):
        most_similar(model, "zzz")


def test_oov_vector(planted_model):
    with pytest.raises(OOVError) as info:
        planted_model.vector("nope")
    assert info.value.token == "nope"
    with pytest.raises(KeyError):
        planted_model.vector("nope")


def test_save_load_round_trip(tmp_path, planted_model):
    path = tmp_path / "emb.txt"
    save_embeddings(planted_model, path)
    loaded = load_embeddings(path)
    assert loaded.vocab.tokens == planted_model.vocab.tokens
    np.testing.assert_allclose(loaded.input_vectors, planted_model.input_vectors, rtol=1e-8, atol=1e-10)


def test_load_errors(tmp_path):
    short = tmp_path / "short.txt"
    short.write_text("3 2\na 1 2\nb 3 4\n")
    with pytest.raises(ParseError, match="end of file"):
        load_embeddings(short)
    zero = tmp_path / "zero.txt"
    zero.write_text("1 0\na\n")
    with pytest.raises(ParseError):
        load_embeddings(zero)
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\na 1\n")
    with pytest.raises(ParseError, match=":2"):
        load_embeddings(bad)


def test_hyperparams_validation():
    with pytest.raises(ValidationError):
        Hyperparams(dim=0)
    with pytest.raises(ValidationError):
        Hyperparams.from_dict({"dimension": 3})
    assert Hyperparams.from_dict(Hyperparams(dim=7).to_dict()) == Hyperparams(dim=7)

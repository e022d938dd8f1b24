import math

import numpy as np
import pytest

from fogfair.errors import DimensionMismatch, DivergedLoss, ShapeIncompatible, SingleClassTraining
from fogfair.models import hard_labels, load_model, predict_scores, save_model
from fogfair.models.forest import ForestConfig, train_forest
from fogfair.models.neural import (
    ArchitectureConfig,
    NeuralModel,
    TrainConfig,
    forward_backward,
    softmax_fog,
    train_neural,
    transfer_finetune,
    weighted_cross_entropy,
)

from gradcheck import check_layer, check_model, random_default_model, random_layer_cases

SMALL = ArchitectureConfig((4, 4, 6, 6), 5, 8)


# --- forest -------------------------------------------------------------------

def _linear_toy(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    return X, (X[:, 0] > 0).astype(int)


def test_forest_generalizes_on_threshold_rule():
    X, y = _linear_toy(100, 0)
    Xt, yt = _linear_toy(500, 1)
    m = train_forest(X, y, ForestConfig(n_trees=25, rng_seed=3))
    assert ((m.predict_scores(Xt) >= 0.5) == yt).mean() >= 0.95


def test_forest_fits_separable_training_set():
    X, y = _linear_toy(80, 2)
    m = train_forest(X, y, ForestConfig(n_trees=15, max_features=4))
    assert ((m.predict_scores(X) >= 0.5) == y).all()


def test_forest_seed_changes_trees_not_majority():
    X, y = _linear_toy(100, 4)
    a = train_forest(X, y, ForestConfig(n_trees=31, rng_seed=1))
    b = train_forest(X, y, ForestConfig(n_trees=31, rng_seed=2))
    assert ((a.predict_scores(X) >= 0.5) == (b.predict_scores(X) >= 0.5)).mean() >= 0.95


def test_forest_determinism_and_errors():
    X, y = _linear_toy(60, 5)
    cfg = ForestConfig(n_trees=10, rng_seed=7)
    assert train_forest(X, y, cfg).predict_scores(X).tobytes() == train_forest(X, y, cfg).predict_scores(X).tobytes()
    with pytest.raises(SingleClassTraining):
        train_forest(X, np.zeros(60, dtype=int), cfg)
    with pytest.raises(DimensionMismatch):
        train_forest(X, y, cfg).predict_scores(X[:, :3])


def test_forest_score_is_vote_fraction():
    X, y = _linear_toy(60, 6)
    m = train_forest(X, y, ForestConfig(n_trees=10))
    votes = np.mean([t.votes(X) for t in m.trees], axis=0)
    np.testing.assert_array_equal(m.predict_scores(X), votes)
    assert set(np.round(m.predict_scores(X) * 10, 9)) <= set(range(11))


def test_forest_monotone_transform_invariance():
    X, y = _linear_toy(120, 8)
    Xt, _ = _linear_toy(200, 9)
    cfg = ForestConfig(n_trees=20, rng_seed=11)
    base = train_forest(X, y, cfg).predict_scores(Xt)
    T, Tt = X.copy(), Xt.copy()
    T[:, 1], Tt[:, 1] = np.exp(3 * X[:, 1]), np.exp(3 * Xt[:, 1])
    T[:, 0], Tt[:, 0] = X[:, 0] ** 3 + 5, Xt[:, 0] ** 3 + 5
    np.testing.assert_array_equal(train_forest(T, y, cfg).predict_scores(Tt), base)


def test_oob_scores_cover_training_rows():
    X, y = _linear_toy(80, 10)
    m = train_forest(X, y, ForestConfig(n_trees=30))
    assert m.oob_scores.shape == (80,)
    assert np.all((m.oob_scores >= 0) & (m.oob_scores <= 1))


# --- network forward / loss -------------------------------------------------

def test_softmax_examples():
    assert softmax_fog(np.array([[0.0, 0.0]]))[0] == 0.5
    assert abs(softmax_fog(np.array([[-20.0, 20.0]]))[0] - 1.0) < 1e-6


def test_single_sample_loss_is_softplus_of_margin():
    z = np.array([[0.3, 2.1]])
    loss, _ = weighted_cross_entropy(z, [1])
    assert loss == pytest.approx(math.log1p(math.exp(-(2.1 - 0.3))), rel=1e-12)


def test_unit_weights_equal_plain_cross_entropy():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(7, 2))
    y = rng.integers(0, 2, 7)
    loss, _ = weighted_cross_entropy(z, y, (1.0, 1.0))
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    assert loss == -np.mean(np.log(p[np.arange(7), y])) or loss == pytest.approx(-np.mean(np.log(p[np.arange(7), y])), abs=1e-15)


def test_forward_shapes_and_probabilities():
    m = NeuralModel.create(3, ArchitectureConfig(), 0)
    logits = m.logits(np.random.default_rng(1).normal(size=(5, 64, 3)))
    assert logits.shape == (5, 2)
    s = softmax_fog(logits)
    assert np.all(np.abs(s + (1 - s) - 1) < 1e-9)
    with pytest.raises(DimensionMismatch):
        m.predict_scores(np.zeros((2, 64, 4)))


def test_layer_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(5):
        for layer, x in random_layer_cases(rng):
            assert check_layer(layer, x, rng) < 1e-4, layer.kind


def test_default_architecture_gradients():
    rng = np.random.default_rng(1)
    model, X, y, w = random_default_model(rng, 5)
    assert check_model(model, X, y, w, rng, n_coords=4)[0] < 1e-4


def test_frozen_layers_get_zero_gradients():
    model, X, y, w = random_default_model(np.random.default_rng(2), 0)
    model.freeze_prefix(len(model.weight_layers))
    _, grads = forward_backward(model, X, y, w)
    assert all(not np.any(g) for layer in grads for g in layer.values())


# --- training ---------------------------------------------------------------

def _tone_toy(n, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(64) / 64.0
    y = rng.integers(0, 2, n)
    X = np.repeat(rng.normal(0, 0.05, size=(n, 64, 1)), 2, axis=2) + 0.5
    X[y == 1] += 0.4 * np.sin(2 * np.pi * 5 * t + rng.uniform(0, 6, (int(y.sum()), 1)))[:, :, None]
    return X, y


def test_train_neural_learns_tone_vs_flat():
    X, y = _tone_toy(200, 0)
    Xt, yt = _tone_toy(200, 1)
    m = train_neural(X, y, TrainConfig(epochs=8, arch=SMALL))
    assert ((m.predict_scores(Xt) >= 0.5) == yt).mean() >= 0.95


def test_zero_epochs_returns_initial_model():
    X, y = _tone_toy(20, 2)
    cfg = TrainConfig(epochs=0, arch=SMALL, rng_seed=4)
    m = train_neural(X, y, cfg)
    init = NeuralModel.create(2, SMALL, 4)
    for a, b in zip(m.get_params(), init.get_params()):
        assert all(np.array_equal(a[k], b[k]) for k in a)


def test_large_learning_rate_diverges():
    X, y = _tone_toy(64, 3)
    with pytest.raises(DivergedLoss):
        train_neural(X, y, TrainConfig(learning_rate=1e3, epochs=5, arch=SMALL))


def test_neural_training_is_deterministic():
    X, y = _tone_toy(40, 5)
    cfg = TrainConfig(epochs=2, arch=SMALL, rng_seed=9)
    a, b = train_neural(X, y, cfg), train_neural(X, y, cfg)
    for pa, pb in zip(a.get_params(), b.get_params()):
        assert all(pa[k].tobytes() == pb[k].tobytes() for k in pa)


def test_neural_single_class():
    X, _ = _tone_toy(10, 6)
    with pytest.raises(SingleClassTraining):
        train_neural(X, np.ones(10, dtype=int), TrainConfig(epochs=1, arch=SMALL))


def test_validation_checkpoint_is_best_epoch():
    X, y = _tone_toy(60, 7)
    Xv, yv = _tone_toy(40, 8)
    m = train_neural(X, y, TrainConfig(epochs=3, arch=SMALL), validation=(Xv, yv))
    assert m.predict_scores(Xv).shape == (40,)


# --- transfer ---------------------------------------------------------------

def test_transfer_freezes_prefix_bitwise():
    X, y = _tone_toy(40, 9)
    pre = train_neural(X, y, TrainConfig(epochs=1, arch=SMALL))
    tuned = transfer_finetune(pre, X, y, 2, TrainConfig(epochs=2, arch=SMALL, rng_seed=1))
    wl = pre.weight_layers
    for rank, i in enumerate(wl):
        same = all(np.array_equal(pre.layers[i].params[k], tuned.layers[i].params[k]) for k in pre.layers[i].params)
        assert same == (rank < 2)


def test_transfer_freeze_all_and_none():
    X, y = _tone_toy(40, 10)
    cfg = TrainConfig(epochs=1, arch=SMALL, rng_seed=2)
    pre = train_neural(X, y, cfg)
    frozen = transfer_finetune(pre, X, y, len(pre.weight_layers), cfg)
    for a, b in zip(pre.get_params(), frozen.get_params()):
        assert all(np.array_equal(a[k], b[k]) for k in a)
    from fogfair.models.neural import sgd_fit

    direct = sgd_fit(pre.copy(), X, y, cfg)
    free = transfer_finetune(pre, X, y, 0, cfg)
    for a, b in zip(direct.get_params(), free.get_params()):
        assert all(np.array_equal(a[k], b[k]) for k in a)


def test_transfer_shape_mismatch():
    X, y = _tone_toy(20, 11)
    pre = train_neural(X, y, TrainConfig(epochs=1, arch=SMALL))
    with pytest.raises(ShapeIncompatible):
        transfer_finetune(pre, np.zeros((4, 64, 3)), np.array([0, 1, 0, 1]))


# --- shared helpers and persistence -----------------------------------------

def test_predict_scores_and_hard_labels():
    X, y = _linear_toy(50, 12)
    m = train_forest(X, y, ForestConfig(n_trees=5))
    s = predict_scores(m, X)
    np.testing.assert_array_equal(hard_labels(s), (s >= 0.5).astype(np.int8))


def test_serialization_round_trip(tmp_path):
    X, y = _linear_toy(50, 13)
    f = train_forest(X, y, ForestConfig(n_trees=6, rng_seed=2))
    save_model(f, tmp_path / "f.npz")
    assert load_model(tmp_path / "f.npz").predict_scores(X).tobytes() == f.predict_scores(X).tobytes()
    Xn, yn = _tone_toy(30, 14)
    n = train_neural(Xn, yn, TrainConfig(epochs=1, arch=SMALL))
    n.freeze_prefix(1)
    save_model(n, tmp_path / "n.npz")
    back = load_model(tmp_path / "n.npz")
    assert back.predict_scores(Xn).tobytes() == n.predict_scores(Xn).tobytes()
    assert back.frozen == n.frozen

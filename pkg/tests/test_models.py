import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedbench import models
from fedbench.data import Dataset, generate_synthetic
from fedbench.errors import ConfigError, InvalidInputError
from fedbench.models import Batch, ModelConfig

SMALL = {
    "logreg": ModelConfig("logreg", 2, 2),
    "mlp": ModelConfig("mlp", 3, 3, hidden_dim=4),
    "cnn-small": ModelConfig("cnn-small", 16, 3, conv_channels=1),
}


def random_instance(config, seed, n=4, scale=1.0):
    rng = np.random.default_rng(seed)
    params = rng.normal(0, scale, config.num_params)
    x = rng.normal(size=(n, config.input_dim))
    y = rng.integers(0, config.num_classes, size=n)
    return params, Batch(x, y)


# -- independent straight-line oracles ----------------------------------------

def naive_logits(params, config, x):
    d, k = config.input_dim, config.num_classes
    out = np.zeros((len(x), k))
    if config.kind == "logreg":
        for i in range(len(x)):
            for c in range(k):
                s = params[d * k + c]
                for j in range(d):
                    s += x[i, j] * params[j * k + c]
                out[i, c] = s
        return out
    if config.kind == "mlp":
        h = config.hidden_dim
        b1, w2, b2 = d * h, d * h + h, d * h + h + h * k
        for i in range(len(x)):
            hidden = []
            for u in range(h):
                s = params[b1 + u] + sum(x[i, j] * params[j * h + u] for j in range(d))
                hidden.append(max(s, 0.0))
            for c in range(k):
                out[i, c] = params[b2 + c] + sum(hidden[u] * params[w2 + u * k + c]
                                                 for u in range(h))
        return out
    raise NotImplementedError


def naive_conv(img, w, b):
    cout, cin = w.shape[:2]
    side = img.shape[1]
    out = np.zeros((cout, side, side))
    for o in range(cout):
        for r in range(side):
            for c in range(side):
                s = b[o]
                for i in range(cin):
                    for dr in range(3):
                        for dc in range(3):
                            rr, cc = r + dr - 1, c + dc - 1
                            if 0 <= rr < side and 0 <= cc < side:
                                s += img[i, rr, cc] * w[o, i, dr, dc]
                out[o, r, c] = s
    return out


def naive_pool(a):
    ch, side = a.shape[0], a.shape[1] // 2
    out = np.zeros((ch, side, side))
    for o in range(ch):
        for r in range(side):
            for c in range(side):
                out[o, r, c] = max(a[o, 2 * r + dr, 2 * c + dc] for dr in (0, 1) for dc in (0, 1))
    return out


def naive_cnn_logits(params, config, x):
    blocks, pos = [], 0
    for shape in config.shapes:
        size = math.prod(shape)
        blocks.append(params[pos:pos + size].reshape(shape))
        pos += size
    w1, b1, w2, b2, w3, b3 = blocks
    side = config.image_side
    out = []
    for row in x:
        img = row.reshape(config.in_channels, side, side)
        a = naive_pool(np.maximum(naive_conv(img, w1, b1), 0))
        a = naive_pool(np.maximum(naive_conv(a, w2, b2), 0))
        out.append(a.ravel() @ w3 + b3)
    return np.array(out)


def naive_loss(logits, y):
    total = 0.0
    for row, label in zip(logits, y):
        e = [math.exp(v) for v in row]
        total -= math.log(e[label] / sum(e))
    return total / len(y)


def finite_difference(params, config, batch, h=1e-5):
    g = np.zeros_like(params)
    for i in range(len(params)):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        g[i] = (models.loss(up, config, batch) - models.loss(down, config, batch)) / (2 * h)
    return g


def relative_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# -- config / init --------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig("svm", 2, 2)
    with pytest.raises(ConfigError):
        ModelConfig("logreg", 2, 1)
    with pytest.raises(ConfigError):
        ModelConfig("logreg", 0, 2)
    with pytest.raises(ConfigError):
        ModelConfig("cnn-small", 10, 2)


def test_init_logreg_layout():
    cfg = ModelConfig("logreg", 2, 2)
    theta = models.init_params(cfg, seed=7)
    assert theta.shape == (6,)
    assert np.all(theta[-2:] == 0)
    assert np.any(theta[:4] != 0)
    assert np.array_equal(theta, models.init_params(cfg, seed=7))


def test_init_mlp_length():
    cfg = ModelConfig("mlp", 784, 10, hidden_dim=64)
    assert models.init_params(cfg, 1).size == 784 * 64 + 64 + 64 * 10 + 10 == 50890


def test_init_glorot_bound():
    cfg = ModelConfig("mlp", 30, 5, hidden_dim=20)
    theta = models.init_params(cfg, 0)
    w1 = theta[:600]
    assert np.abs(w1).max() <= math.sqrt(6 / 50)
    assert abs(w1.mean()) < 0.05


def test_cnn_layout_for_mnist():
    cfg = ModelConfig("cnn-small", 784, 10)
    assert cfg.shapes == [(8, 1, 3, 3), (8,), (16, 8, 3, 3), (16,), (16 * 7 * 7, 10), (10,)]


# -- prediction -------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["logreg", "mlp", "cnn-small"])
def test_zero_params_zero_logits(kind):
    cfg = SMALL[kind]
    x = np.random.default_rng(0).normal(size=(5, cfg.input_dim))
    logits = models.predict_logits(np.zeros(cfg.num_params), cfg, x)
    assert np.all(logits == 0)
    assert np.all(models.predict(np.zeros(cfg.num_params), cfg, x) == 0)


def test_identity_logreg_picks_hot_coordinate():
    cfg = ModelConfig("logreg", 4, 4)
    theta = np.concatenate([np.eye(4).ravel(), np.zeros(4)])
    for k in range(4):
        logits = models.predict_logits(theta, cfg, np.eye(4)[[k]])[0]
        assert logits.argmax() == k
        assert np.sum(logits == logits.max()) == 1


@pytest.mark.parametrize("kind", ["logreg", "mlp", "cnn-small"])
def test_logits_match_straight_line_oracle(kind):
    cfg = SMALL[kind]
    params, batch = random_instance(cfg, seed=11, n=6)
    got = models.predict_logits(params, cfg, batch.features)
    oracle = naive_cnn_logits if kind == "cnn-small" else naive_logits
    want = oracle(params, cfg, batch.features)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_cnn_odd_side_matches_oracle():
    cfg = ModelConfig("cnn-small", 2 * 25, 2, conv_channels=1, in_channels=2)
    params, batch = random_instance(cfg, seed=2, n=3)
    np.testing.assert_allclose(models.predict_logits(params, cfg, batch.features),
                               naive_cnn_logits(params, cfg, batch.features), rtol=1e-12)


def test_dimension_mismatch_rejected():
    cfg = SMALL["logreg"]
    with pytest.raises(InvalidInputError):
        models.predict_logits(np.zeros(6), cfg, np.zeros((3, 5)))
    with pytest.raises(InvalidInputError):
        models.predict_logits(np.zeros(7), cfg, np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        models.loss(np.zeros(6), cfg, Batch(np.zeros((2, 2)), np.array([0, 2])))


# -- loss ------------------------------------------------------------------------------

def test_uniform_logits_loss_is_log_k():
    cfg = ModelConfig("logreg", 5, 10)
    batch = Batch(np.random.default_rng(1).normal(size=(7, 5)), np.arange(7))
    assert models.loss(np.zeros(cfg.num_params), cfg, batch) == pytest.approx(2.302585092994046,
                                                                              abs=1e-12)


def test_saturated_correct_logits_loss_vanishes():
    cfg = ModelConfig("logreg", 2, 2)
    batch = Batch(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
    losses = []
    for margin in (1.0, 10.0, 100.0, 1000.0):
        theta = np.array([margin, 0, 0, margin, 0, 0], dtype=float)
        losses.append(models.loss(theta, cfg, batch))
    assert losses == sorted(losses, reverse=True)
    assert losses[-1] == 0.0
    assert np.isfinite(losses).all()


@pytest.mark.parametrize("kind", ["logreg", "mlp", "cnn-small"])
def test_loss_matches_naive_softmax(kind):
    cfg = SMALL[kind]
    params, batch = random_instance(cfg, seed=5, n=8, scale=0.5)
    logits = models.predict_logits(params, cfg, batch.features)
    assert models.loss(params, cfg, batch) == pytest.approx(naive_loss(logits, batch.labels),
                                                            rel=1e-9)


# -- gradient --------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["logreg", "mlp", "cnn-small"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(kind, seed):
    cfg = SMALL[kind]
    assert cfg.num_params <= 100
    params, batch = random_instance(cfg, seed)
    analytic = models.gradient(params, cfg, batch)
    numeric = finite_difference(params, cfg, batch)
    assert analytic.shape == params.shape
    assert relative_error(analytic, numeric).max() < 1e-4


def test_duplicated_batch_same_gradient():
    cfg = SMALL["mlp"]
    params, batch = random_instance(cfg, 3, n=5)
    doubled = Batch(np.vstack([batch.features] * 2), np.concatenate([batch.labels] * 2))
    np.testing.assert_allclose(models.gradient(params, cfg, doubled),
                               models.gradient(params, cfg, batch), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("kind", ["logreg", "mlp", "cnn-small"])
def test_gradient_of_union_is_size_weighted_mean(kind):
    cfg = SMALL[kind]
    params, a = random_instance(cfg, 8, n=3)
    _, b = random_instance(cfg, 9, n=7)
    both = Batch(np.vstack([a.features, b.features]), np.concatenate([a.labels, b.labels]))
    pooled = models.gradient(params, cfg, both)
    mixed = (3 * models.gradient(params, cfg, a) + 7 * models.gradient(params, cfg, b)) / 10
    np.testing.assert_allclose(pooled, mixed, rtol=0, atol=1e-12)


def test_gradient_vanishes_when_trained_on_single_example():
    cfg = ModelConfig("logreg", 2, 2)
    batch = Batch(np.array([[1.0, -1.0]]), np.array([1]))
    theta = np.zeros(cfg.num_params)
    norms = []
    for _ in range(5000):
        g = models.gradient(theta, cfg, batch)
        norms.append(np.linalg.norm(g))
        theta = models.sgd_step(theta, g, 0.5)
    assert norms[-1] < 1e-3
    assert norms[-1] < norms[0]


# -- sgd ----------------------------------------------------------------------------------

def test_sgd_step_examples():
    theta = np.array([1.0, 1.0])
    assert np.array_equal(models.sgd_step(theta, np.array([2.0, -2.0]), 0.0), theta)
    assert np.array_equal(models.sgd_step(theta, np.array([2.0, -2.0]), 0.5), [0.0, 2.0])
    with pytest.raises(InvalidInputError):
        models.sgd_step(theta, np.zeros(3), 0.1)


def test_two_half_steps_differ_from_one_step():
    cfg = SMALL["mlp"]
    params, batch = random_instance(cfg, 4)
    one = models.sgd_step(params, models.gradient(params, cfg, batch), 0.5)
    half = models.sgd_step(params, models.gradient(params, cfg, batch), 0.25)
    two = models.sgd_step(half, models.gradient(half, cfg, batch), 0.25)
    assert not np.allclose(one, two)


# -- train_local -------------------------------------------------------------------------

def test_full_batch_epoch_is_one_gradient_step():
    cfg = SMALL["mlp"]
    params, batch = random_instance(cfg, 6, n=9)
    data = Dataset(batch.features, batch.labels, cfg.num_classes)
    out = models.train_local(params, cfg, data, epochs=1, batch_size=9, lr=0.1, seed=3)
    want = params - 0.1 * models.gradient(params, cfg, batch)
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-14)


def test_train_local_is_pure_and_deterministic():
    cfg = SMALL["logreg"]
    data = generate_synthetic(40, 2, 2, 2.0, seed=0)
    theta = models.init_params(cfg, 0)
    before = theta.copy()
    a = models.train_local(theta, cfg, data, 3, 8, 0.1, seed=5)
    b = models.train_local(theta, cfg, data, 3, 8, 0.1, seed=5)
    c = models.train_local(theta, cfg, data, 3, 8, 0.1, seed=6)
    assert np.array_equal(theta, before)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_train_local_rejects_bad_input():
    cfg = SMALL["logreg"]
    data = generate_synthetic(10, 2, 2, 1.0, 0)
    with pytest.raises(InvalidInputError):
        models.train_local(np.zeros(6), cfg, data, 0)
    with pytest.raises(InvalidInputError):
        models.train_local(np.zeros(6), cfg, Batch(np.zeros((0, 2)), np.zeros(0, int)), 1)


def test_logreg_separates_two_blobs():
    cfg = ModelConfig("logreg", 2, 2)
    data = generate_synthetic(200, 2, 2, separation=10.0, seed=0)
    theta = models.train_local(models.init_params(cfg, 0), cfg, data, epochs=20,
                               batch_size=32, lr=0.05, seed=0)
    accuracy, _ = models.evaluate(theta, cfg, data)
    assert accuracy >= 0.99


# -- evaluate --------------------------------------------------------------------------------

def test_zero_params_accuracy_is_one_over_k():
    cfg = ModelConfig("mlp", 3, 4, hidden_dim=5)
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(40, 3)), np.repeat(np.arange(4), 10), 4)
    accuracy, mean_loss = models.evaluate(np.zeros(cfg.num_params), cfg, data)
    assert accuracy == 0.25
    assert mean_loss == pytest.approx(math.log(4))


def test_overfit_single_example():
    cfg = ModelConfig("mlp", 3, 3, hidden_dim=4)
    data = Dataset(np.array([[0.5, -1.0, 2.0]]), np.array([2]), 3)
    theta = models.train_local(models.init_params(cfg, 1), cfg, data, 200, 1, 0.1, 0)
    assert models.evaluate(theta, cfg, data)[0] == 1.0


def test_accuracy_matches_row_count():
    cfg = ModelConfig("mlp", 6, 5, hidden_dim=7)
    rng = np.random.default_rng(12)
    params = rng.normal(size=cfg.num_params)
    data = Dataset(rng.normal(size=(50, 6)), rng.integers(0, 5, 50), 5)
    hits = 0
    logits = naive_logits(params, cfg, data.features)
    for row, label in zip(logits, data.labels):
        best = 0
        for c in range(1, len(row)):
            if row[c] > row[best]:
                best = c
        hits += best == label
    assert models.evaluate(params, cfg, data)[0] == hits / 50


def test_argmax_ties_go_to_lowest_index():
    cfg = ModelConfig("logreg", 1, 3)
    theta = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    assert models.predict(theta, cfg, np.array([[2.0]]))[0] == 0


# -- properties ---------------------------------------------------------------------------------

def test_long_sgd_run_stays_finite():
    cfg = ModelConfig("mlp", 8, 3, hidden_dim=6)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, size=(64, 8))
    y = rng.integers(0, 3, 64)
    theta = models.init_params(cfg, 0)
    for step in range(10_000):
        rows = rng.integers(0, 64, 8)
        theta = models.sgd_step(theta, models.gradient(theta, cfg, Batch(x[rows], y[rows])), 0.5)
    assert np.all(np.isfinite(theta))


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["logreg", "mlp"]), seed=st.integers(0, 2**31),
       n=st.integers(1, 20), k=st.integers(2, 6), scale=st.floats(0, 30))
def test_loss_bounds(kind, seed, n, k, scale):
    cfg = ModelConfig(kind, 4, k, hidden_dim=3)
    rng = np.random.default_rng(seed)
    batch = Batch(rng.normal(0, scale + 1e-3, (n, 4)), rng.integers(0, k, n))
    params = rng.normal(0, scale + 1e-3, cfg.num_params)
    value = models.loss(params, cfg, batch)
    assert value >= 0 and np.isfinite(value)
    assert models.loss(np.zeros(cfg.num_params), cfg, batch) <= math.log(k) + 1e-12
    assert np.all(np.isfinite(models.gradient(params, cfg, batch)))

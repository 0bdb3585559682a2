from __future__ import annotations

import json
import math

import numpy as np
import pytest

from ambisense.encoder import (
    MAGIC,
    Architecture,
    ModelFormatError,
    NonFiniteInputError,
    TrainConfig,
    channel_stats,
    evaluate,
    forward,
    grad_check,
    init_params,
    load_params,
    mean_loss,
    params_from_bytes,
    params_to_bytes,
    predict,
    save_training,
    train,
    zero_params,
)
from ambisense.syngen import WindowSet, build_corpus
from ambisense.trace import Window

SMALL = Architecture(channels=15, window=24, time_hidden=5, features=3, fusion_hidden=6, classes=4)


def _small_batch(seed=0, n=6):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, SMALL.channels, SMALL.window))
    y = rng.integers(0, SMALL.classes, size=n)
    return x, y


def _small_params(seed=0, scale=1.0):
    x, _ = _small_batch(seed)
    mean, std = channel_stats(x)
    params = init_params(SMALL, seed, mean, std, scale)
    rng = np.random.default_rng(seed + 1)
    for name, w in params.weights.items():
        if name[1] == "b":
            w += rng.uniform(-0.1, 0.1, size=w.shape)  # move ReLUs off the zero kink
    return params


def test_shapes_and_parameter_count():
    arch = Architecture()
    shapes = arch.shapes()
    assert shapes["tw1"] == (15, 180, 32)
    assert shapes["sw"] == (15, 91, 16)
    assert shapes["fw1"] == (240, 64)
    assert shapes["fw2"] == (64, 20)
    assert init_params(arch).n_parameters() == sum(int(np.prod(s)) for s in shapes.values())


def test_grad_check_every_entry_small_model():
    x, y = _small_batch()
    report = grad_check(_small_params(), x, y)
    assert report.max_rel_error < 1e-4, report.per_group
    assert report.checked["tw1"] + report.skipped["tw1"] == 15 * 24 * 5
    assert sum(report.skipped.values()) <= 0.05 * sum(report.checked.values())


def test_grad_check_sampled_full_model(corpus):
    sub = corpus.train.subset(np.arange(0, 800, 50))
    mean, std = channel_stats(corpus.train.x)
    params = init_params(Architecture(), 3, mean, std)
    report = grad_check(params, sub.x, sub.y, max_entries=25, seed=1)
    assert report.max_rel_error < 1e-4, report.per_group
    # probes straddling a ReLU kink are excluded; they must stay rare
    assert sum(report.skipped.values()) <= 0.1 * sum(report.checked.values())


def test_zero_params_give_uniform_probabilities():
    x = np.random.default_rng(0).standard_normal((4, 15, 180))
    _, probs = forward(x, zero_params())
    np.testing.assert_allclose(probs, 0.05)
    assert mean_loss(zero_params(), x, np.zeros(4, dtype=int)) == pytest.approx(math.log(20), abs=1e-12)


def test_initial_loss_near_ln20_with_tiny_init(corpus):
    mean, std = channel_stats(corpus.train.x)
    params = init_params(Architecture(), 0, mean, std, scale=1e-3)
    assert abs(mean_loss(params, corpus.train.x, corpus.train.y) - math.log(20)) < 0.1


def test_output_is_affine_in_final_layer():
    params = _small_params(2)
    x, _ = _small_batch(3, n=2)
    base, _ = forward(x, params)
    scaled = params.copy()
    scaled.weights["fw2"] *= 2.0
    scaled.weights["fb2"] *= 2.0
    twice, _ = forward(x, scaled)
    np.testing.assert_allclose(twice, 2 * base, rtol=1e-12)


def test_saturation_is_numerically_stable():
    params = _small_params(4)
    params.weights["fw2"] *= 1e4
    x, _ = _small_batch(5)
    logits, probs = forward(x, params)
    assert np.all(np.isfinite(probs))
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0)
    assert np.all(np.abs(logits).max(axis=-1) > 100)


def test_forward_accepts_window_objects():
    params = init_params(Architecture(), 0)
    values = np.random.default_rng(1).standard_normal((15, 180))
    logits, probs = forward(Window(values), params)
    assert logits.shape == (20,) and probs.shape == (20,)
    np.testing.assert_allclose(forward(values, params)[1], probs)


def test_non_finite_and_bad_shape_inputs():
    params = init_params(Architecture(), 0)
    x = np.zeros((1, 15, 180))
    x[0, 3, 7] = np.inf
    with pytest.raises(NonFiniteInputError):
        predict(x, params)
    with pytest.raises(ValueError):
        predict(np.zeros((1, 15, 179)), params)


def test_serialization_round_trip(tmp_path, trained):
    params = trained.params
    blob = params_to_bytes(params)
    assert blob[:5] == MAGIC
    assert len(blob) == 5 + 8 * (params.n_parameters() + 30)
    assert params_from_bytes(blob) == params
    path = tmp_path / "m.ambm"
    save_training(trained, path)
    back = load_params(path)
    assert back == params
    manifest = json.loads((tmp_path / "m.ambm.json").read_text())
    assert manifest["corpus_hash"] == trained.corpus_hash
    assert manifest["config"]["learning_rate"] == trained.config.learning_rate
    assert manifest["seed"] == trained.config.seed
    with pytest.raises(ModelFormatError):
        params_from_bytes(b"XXXXX" + blob[5:])
    with pytest.raises(ModelFormatError):
        params_from_bytes(blob[:-8])


def test_training_is_bit_deterministic():
    c = build_corpus(6, 9)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=5)
    a, b = train(c.train, cfg), train(c.train, cfg)
    assert a.params == b.params
    assert a.loss_history == b.loss_history
    assert params_to_bytes(a.params) == params_to_bytes(b.params)
    other = train(c.train, TrainConfig(epochs=3, batch_size=16, seed=6))
    assert other.params != a.params


def test_training_reduces_loss(trained):
    h = trained.loss_history
    assert len(h) == trained.config.epochs + 1
    assert h[-1] < 0.2 * h[0]
    assert trained.metadata["config"]["momentum"] == 0.9


def test_train_preconditions():
    c = build_corpus(4, 1)
    with pytest.raises(ValueError):
        train(c.train.subset([]))
    one_class = c.train.subset(np.flatnonzero(c.train.y == 0))
    with pytest.raises(ValueError):
        train(one_class)


def test_evaluate_on_held_out_split(corpus, model):
    m = evaluate(corpus.test, model)
    assert m.macro_f1 > 0.9
    assert int(m.confusion.sum()) == len(corpus.test)
    with pytest.raises(ValueError):
        evaluate(WindowSet(np.zeros((0, 15, 180)), np.zeros(0, dtype=int), np.zeros(0, dtype=int)), model)


def test_untrained_model_is_near_chance(corpus):
    mean, std = channel_stats(corpus.train.x)
    m = evaluate(corpus.test, init_params(Architecture(), 0, mean, std))
    assert m.macro_f1 == pytest.approx(0.05, abs=0.05)

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canet import models as M
from canet.numeric import DimensionError, Parameter
from canet.train import (
    AdamState,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    init_model,
    metrics_from_predictions,
    smoothed_monotone,
)


def adam_oracle(theta, grads, lr, b1, b2, eps):
    """Textbook bias-corrected Adam over a sequence of gradients."""
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


# -- Adam --------------------------------------------------------------------------------


def test_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]))
    adam_step([p], [np.zeros(2)], AdamState.zeros([p]), TrainConfig())
    assert p.data.tolist() == [1.0, -2.0]


def test_first_step_is_lr_times_sign():
    p = Parameter(np.array([0.0, 0.0, 0.0]))
    adam_step([p], [np.array([3.0, -0.2, 50.0])], AdamState.zeros([p]), TrainConfig(learning_rate=0.1))
    np.testing.assert_allclose(np.abs(p.data), 0.1, atol=1e-6)
    assert np.array_equal(np.sign(p.data), [-1, 1, -1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_adam_matches_oracle(seed, steps):
    r = np.random.default_rng(seed)
    theta = r.normal(size=(3, 2))
    grads = [r.normal(size=(3, 2)) for _ in range(steps)]
    cfg = TrainConfig(learning_rate=0.01)
    p = Parameter(theta)
    state = AdamState.zeros([p])
    for g in grads:
        adam_step([p], [g], state, cfg)
    np.testing.assert_allclose(p.data, adam_oracle(theta, grads, 0.01, 0.9, 0.999, 1e-8), atol=1e-12, rtol=0)
    assert state.t == steps


def test_adam_shape_mismatch():
    p = Parameter(np.ones(3))
    with pytest.raises(DimensionError):
        adam_step([p], [np.ones(2)], AdamState.zeros([p]), TrainConfig())


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(model="gru")
    cfg = TrainConfig(epochs=3, softmax_axis="flat")
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 1, "dropout": 0.5})


# -- metrics -------------------------------------------------------------------------------


def test_metrics_hand_example():
    m = metrics_from_predictions([1, 1, 0, 0], [1, 0, 0, 0])
    assert m.accuracy == 0.75
    assert m.f1[1] == pytest.approx(2 / 3) and m.f1[0] == pytest.approx(0.8)
    assert m.macro_f1 == pytest.approx(0.7333, abs=1e-4)
    assert m.confusion == [[2, 1], [0, 1]]


def test_metrics_all_correct_and_absent_class():
    m = metrics_from_predictions([1, 0, 1], [1, 0, 1])
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0
    m = metrics_from_predictions([0, 0], [0, 0])
    assert m.f1 == [1.0, 0.0] and m.absent_classes == [1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_confusion_rows_match_label_counts(pairs):
    preds, labels = zip(*pairs)
    m = metrics_from_predictions(preds, labels)
    assert m.n == len(pairs)
    assert [sum(r) for r in m.confusion] == [labels.count(0), labels.count(1)]


def test_metrics_errors():
    with pytest.raises(ValueError):
        metrics_from_predictions([], [])


# -- fit ---------------------------------------------------------------------------------


def test_zero_epochs_returns_initial_model(small_windows):
    cfg = TrainConfig(epochs=0)
    params, hist = fit(cfg, small_windows)
    fresh = init_model(cfg, small_windows)
    for a, b in zip(params.parameters(), fresh.parameters()):
        assert np.array_equal(a.data, b.data)
    assert hist.epochs == []


def test_zero_learning_rate_is_bitwise_noop(small_windows):
    cfg = TrainConfig(epochs=2, learning_rate=0.0)
    params, hist = fit(cfg, small_windows.subset(range(8)))
    fresh = init_model(cfg, small_windows)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(params.parameters(), fresh.parameters()))
    assert len(hist.epochs) == 2


def test_fit_is_deterministic(small_windows):
    cfg = TrainConfig(epochs=2, batch_size=8)
    h1 = fit(cfg, small_windows, small_windows)[1].to_dict()
    h2 = fit(cfg, small_windows, small_windows)[1].to_dict()
    assert json.dumps(h1) == json.dumps(h2)
    assert set(h1["final"]) >= {"accuracy", "macro_f1", "confusion", "f1"}
    assert h1["config"]["learning_rate"] == 1e-3


def test_epoch_count_does_not_change_initialization(small_windows):
    a = init_model(TrainConfig(epochs=1), small_windows)
    b = init_model(TrainConfig(epochs=50), small_windows)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))


def test_fit_lowers_training_loss(small_windows):
    _, hist = fit(TrainConfig(epochs=6, batch_size=4, learning_rate=1e-2), small_windows)
    assert hist.train_losses[-1] < hist.train_losses[0]


def test_fit_gcn_canet(skeleton_segments):
    from canet.data import make_windows

    ws = make_windows(skeleton_segments)
    params, hist = fit(TrainConfig(model="gcn-canet", epochs=1, batch_size=4), ws, ws)
    assert params.kind == "gcn-canet" and hist.final["confusion"]


def test_fit_errors(small_windows):
    with pytest.raises(ValueError):
        fit(TrainConfig(), small_windows.subset([]))
    with pytest.raises(ValueError):
        evaluate(init_model(TrainConfig(), small_windows), small_windows.subset([]))
    with pytest.raises(ValueError):
        init_model(TrainConfig(model="gcn-canet"), small_windows)


def test_evaluate_round_trip(tmp_path, small_windows):
    params, _ = fit(TrainConfig(epochs=1, batch_size=8), small_windows)
    M.save_model(params, tmp_path / "m.json")
    assert evaluate(M.load_model(tmp_path / "m.json"), small_windows) == evaluate(params, small_windows)


def test_smoothed_monotone():
    assert smoothed_monotone([5, 4, 3, 2, 1, 0.5, 0.4])
    assert not smoothed_monotone([1, 1, 1, 1, 1, 9, 9, 9])
    assert smoothed_monotone([1, 2])

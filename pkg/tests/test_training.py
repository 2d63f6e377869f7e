import json

import numpy as np
import pytest

from pantry.errors import ArgumentError, ConfigError, StateError, StructureError
from pantry.resnet import build_micro_resnet, replace_head
from pantry.synthetic import make_dataset
from pantry.tensor import Tensor
from pantry.training import (
    AdamState,
    EvalReport,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    report_from_labels,
    report_from_probabilities,
    set_trainable,
    transfer_train,
    write_history_csv,
)


def _param(value, grad):
    p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
    p.grad = np.asarray(grad, dtype=np.float64)
    return p


# ---- Adam --------------------------------------------------------------------


def _adam_oracle(theta, grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook scalar Adam, one loop iteration per step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return theta


def test_adam_first_step_unit_gradient():
    p = _param([0.0], [1.0])
    adam_step({"w": p}, AdamState())
    np.testing.assert_allclose(p.data, [-0.001], rtol=1e-6)


def test_adam_two_steps_match_oracle():
    p = _param([0.0], [1.0])
    state = AdamState()
    adam_step({"w": p}, state)
    adam_step({"w": p}, state)
    assert state.t == 2
    np.testing.assert_allclose(p.data, [_adam_oracle(0.0, [1.0, 1.0])], rtol=1e-12)
    np.testing.assert_allclose(p.data, [-0.002], rtol=1e-6)


def test_adam_varying_gradients_match_oracle(rng):
    grads = rng.normal(size=(6, 5))
    start = rng.normal(size=5)
    p = _param(start.copy(), grads[0])
    state = AdamState()
    for g in grads:
        p.grad = g.copy()
        adam_step({"w": p}, state)
    expected = [_adam_oracle(start[j], grads[:, j]) for j in range(5)]
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_adam_zero_gradient_is_noop(rng):
    start = rng.normal(size=(3, 4))
    p = _param(start.copy(), np.zeros((3, 4)))
    adam_step({"w": p}, AdamState())
    assert np.array_equal(p.data, start)


def test_adam_first_step_bounded(rng):
    g = rng.normal(scale=100, size=50)
    p = _param(np.zeros(50), g)
    adam_step({"w": p}, AdamState())
    assert np.all(np.abs(p.data) <= 0.001 * (1 + 1e-6))


def test_adam_skips_frozen_and_requires_grad():
    frozen = Tensor(np.ones(3), requires_grad=False)
    live = _param([1.0, 2.0], [0.5, -0.5])
    adam_step({"frozen": frozen, "live": live}, AdamState())
    assert np.array_equal(frozen.data, np.ones(3))
    missing = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(StateError, match="missing"):
        adam_step({"missing": missing}, AdamState())


# ---- fit -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy():
    """Four pattern classes at 16x16, channel-first, one-hot labels."""
    images, labels = make_dataset(per_class=12, size=16, seed=3, classes=("disc", "square", "horizontal_stripes", "vertical_stripes"))
    x = images.transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    y = np.eye(4, dtype=np.float32)[labels]
    return x, y


def _fresh(num_classes=4, seed=0):
    return replace_head(build_micro_resnet(10, input_size=16, seed=seed), num_classes, seed=seed)


def test_default_config():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.learning_rate, cfg.freeze_base) == (20, 0.001, True)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="cosine")


def test_fit_loss_decreases(toy):
    g = _fresh()
    set_trainable(g, "all", True)
    history = fit(g, toy, toy, TrainConfig(epochs=6, batch_size=8, freeze_base=False, learning_rate=0.003))
    assert len(history) == 6 and [h.epoch for h in history] == list(range(1, 7))
    assert history[-1].train_loss < history[0].train_loss


def test_fit_frozen_base_unchanged(toy):
    g = _fresh()
    before = {n: g.params[n].data.tobytes() for n in g.base_param_names()}
    head_before = {n: g.params[n].data.copy() for n in g.head_param_names()}
    fit(g, toy, toy, TrainConfig(epochs=1, batch_size=16))
    assert all(g.params[n].data.tobytes() == b for n, b in before.items())
    assert any(not np.array_equal(g.params[n].data, v) for n, v in head_before.items())


def test_fit_bitwise_reproducible(toy):
    runs = []
    for _ in range(2):
        g = _fresh()
        hist = fit(g, toy, toy, TrainConfig(epochs=2, batch_size=16, seed=9))
        runs.append((hist, {n: p.data.tobytes() for n, p in g.params.items()}))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_fit_label_width_mismatch(toy):
    x, y = toy
    with pytest.raises(ArgumentError, match="width 4"):
        fit(_fresh(), (x, y[:, :3]), toy, TrainConfig(epochs=1))
    with pytest.raises(ArgumentError):
        fit(_fresh(), (x[:0], y[:0]), toy, TrainConfig(epochs=1))


def test_freeze_all_makes_fit_noop(toy):
    g = _fresh()
    set_trainable(g, "all", False)
    before = {n: p.data.tobytes() for n, p in g.params.items()}
    fit(g, toy, toy, TrainConfig(epochs=1, batch_size=16, freeze_base=False))
    assert {n: p.data.tobytes() for n, p in g.params.items()} == before


def test_unfreeze_all_moves_every_parameter(toy):
    g = _fresh()
    set_trainable(g, "all", True)
    before = {n: p.data.copy() for n, p in g.params.items()}
    fit(g, toy, toy, TrainConfig(epochs=1, batch_size=48, freeze_base=False))
    unchanged = [n for n, p in g.params.items() if np.array_equal(p.data, before[n])]
    assert unchanged == []


def test_set_trainable_requires_surgery():
    g = build_micro_resnet(4, input_size=16)
    with pytest.raises(StructureError):
        set_trainable(g, "base", False)
    with pytest.raises(ArgumentError):
        set_trainable(_fresh(), "middle", False)


def test_reduce_on_plateau(toy, monkeypatch):
    import pantry.training as training

    losses = iter([1.0, 0.9, 0.95, 0.97, 0.99, 0.5])
    monkeypatch.setattr(training, "_loss_acc", lambda *a: (next(losses), 0.5))
    g = _fresh()
    cfg = TrainConfig(epochs=6, batch_size=48, lr_schedule="reduce_on_plateau", plateau_patience=2)
    history = fit(g, toy, toy, cfg)
    # epochs 3 and 4 fail to improve on 0.9, so epoch 5 runs at lr / 10
    assert [h.learning_rate for h in history] == pytest.approx([1e-3, 1e-3, 1e-3, 1e-3, 1e-4, 1e-4])


def test_transfer_train_phases(toy):
    g = _fresh()
    history = transfer_train(g, toy, toy, TrainConfig(epochs=3, batch_size=16), head_epochs=1)
    assert [h.epoch for h in history] == [1, 2, 3]
    assert all(p.requires_grad for p in g.params.values())
    with pytest.raises(ConfigError):
        transfer_train(_fresh(), toy, toy, TrainConfig(epochs=3), head_epochs=3)


def test_history_csv(toy, tmp_path):
    history = fit(_fresh(), toy, toy, TrainConfig(epochs=2, batch_size=48))
    write_history_csv(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 3 and float(lines[1].split(",")[1]) == history[0].train_loss


# ---- evaluation ----------------------------------------------------------------


def test_eval_all_correct_and_all_wrong():
    assert report_from_labels([0, 1, 2, 2], [0, 1, 2, 2], 3).accuracy == 1.0
    assert report_from_labels([0, 1, 2], [1, 2, 0], 3).accuracy == 0.0


def test_eval_hand_tallied():
    # true 0,0,1,1,2,2 ; predicted 0,1,1,1,2,0 -> 4 of 6 correct
    rep = report_from_labels([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0], 3, ["a", "b", "c"])
    expected = np.array([[1, 1, 0], [0, 2, 0], [1, 0, 1]])
    assert np.array_equal(rep.confusion_matrix, expected)
    assert rep.accuracy == pytest.approx(2 / 3)
    assert rep.accuracy == np.trace(rep.confusion_matrix) / rep.total
    np.testing.assert_allclose(rep.precision, [0.5, 2 / 3, 1.0])
    np.testing.assert_allclose(rep.recall, [0.5, 1.0, 0.5])
    data = json.loads(rep.to_json())
    assert data["matrix"] == expected.ravel().tolist() and data["class_names"] == ["a", "b", "c"]


def test_eval_ties_go_to_lowest_class():
    probs = np.array([[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]])
    rep = report_from_probabilities(probs, np.eye(3)[[0, 1]])
    assert rep.accuracy == 1.0


def test_eval_empty():
    with pytest.raises(ArgumentError):
        report_from_labels([], [], 3)
    with pytest.raises(ArgumentError):
        evaluate(_fresh(), (np.zeros((0, 3, 16, 16)), np.zeros((0, 4))))


def test_evaluate_graph(toy):
    rep = evaluate(_fresh(), toy)
    assert isinstance(rep, EvalReport) and rep.total == len(toy[0])
    assert rep.confusion_matrix.shape == (4, 4)

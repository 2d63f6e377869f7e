"""Adam, the training loop, and classification evaluation."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from pantry.errors import ArgumentError, ConfigError, NumericError, StateError, StructureError
from pantry.resnet import LayerGraph
from pantry.tensor import Tape, Tensor, backward, cross_entropy

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One Adam update in place on every parameter with ``requires_grad``.

    Frozen parameters are skipped entirely; a trainable parameter without a
    gradient is a StateError.
    """
    trainable = {name: p for name, p in params.items() if p.requires_grad}
    for name, p in trainable.items():
        if p.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
        if p.grad.shape != p.shape:
            raise StateError(f"gradient shape {p.grad.shape} does not match parameter {name!r} {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in trainable.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    freeze_base: bool = True
    learning_rate: float = 0.001
    lr_schedule: str = "none"  # or "reduce_on_plateau"
    plateau_factor: float = 0.1
    plateau_patience: int = 2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr_schedule not in ("none", "reduce_on_plateau"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    learning_rate: float


def set_trainable(graph: LayerGraph, selector: str, trainable: bool) -> LayerGraph:
    """Set ``requires_grad`` on the base, head, or all parameters of a surgered graph."""
    if selector == "all":
        if graph.base_size is None:
            raise StructureError("graph has no base/head boundary; apply replace_head first")
        names = list(graph.params)
    elif selector == "base":
        names = graph.base_param_names()
    elif selector == "head":
        names = graph.head_param_names()
    else:
        raise ArgumentError(f"selector must be base, head or all, got {selector!r}")
    for name in names:
        graph.params[name].requires_grad = bool(trainable)
    return graph


def _check_data(graph: LayerGraph, data, what: str):
    x, y = data
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) == 0:
        raise ArgumentError(f"{what} data is empty")
    if x.shape[1:] != tuple(graph.input_shape):
        raise ArgumentError(f"{what} images have shape {x.shape[1:]}, graph expects {tuple(graph.input_shape)}")
    if y.ndim != 2 or y.shape[1] != graph.num_classes or len(y) != len(x):
        raise ArgumentError(f"{what} labels must be one-hot of width {graph.num_classes}, got {y.shape}")
    return x.astype(graph.dtype, copy=False), y


def predict(graph: LayerGraph, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Softmax outputs for ``x`` without recording gradients."""
    outs = []
    for start in range(0, len(x), batch_size):
        outs.append(graph.forward(Tensor(np.ascontiguousarray(x[start:start + batch_size]))).data)
    return np.concatenate(outs)


def _loss_acc(graph, x, y, batch_size):
    probs = predict(graph, x, batch_size)
    loss = cross_entropy(Tensor(probs), y).item()
    acc = float(np.mean(argmax_lowest(probs) == y.argmax(axis=1)))
    return loss, acc


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(probs, axis=1)


def fit(graph: LayerGraph, train_data, val_data, config: TrainConfig | None = None,
        state: AdamState | None = None) -> list[EpochStats]:
    """Train with Adam + categorical cross-entropy; one history row per epoch.

    ``train_data`` and ``val_data`` are ``(images, one_hot)`` array pairs with
    images in ``N x C x H x W`` layout. When ``config.freeze_base`` is true and
    the graph has a base/head boundary, base parameters are frozen first.
    """
    config = config or TrainConfig()
    x, y = _check_data(graph, train_data, "train")
    vx, vy = _check_data(graph, val_data, "validation")
    if config.freeze_base and graph.base_size is not None:
        set_trainable(graph, "base", False)
    state = state or AdamState(learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best_val = np.inf
    stale = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        losses, correct = [], 0
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                with Tape():
                    probs = graph.forward(Tensor(xb))
                    loss = cross_entropy(probs, yb)
                if loss.requires_grad:
                    backward(loss)
                    adam_step(graph.params, state)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from exc
            losses.append(loss.item() * len(idx))
            correct += int(np.sum(argmax_lowest(probs.data) == yb.argmax(axis=1)))
        val_loss, val_acc = _loss_acc(graph, vx, vy, max(config.batch_size, 64))
        stats = EpochStats(epoch, float(np.sum(losses) / len(x)), correct / len(x), val_loss, val_acc,
                           state.learning_rate)
        history.append(stats)
        logger.info("epoch %d: loss %.4f acc %.3f val_loss %.4f val_acc %.3f",
                    epoch, stats.train_loss, stats.train_acc, val_loss, val_acc)
        if config.lr_schedule == "reduce_on_plateau":
            if val_loss < best_val:
                best_val, stale = val_loss, 0
            else:
                stale += 1
                if stale >= config.plateau_patience:
                    state.learning_rate *= config.plateau_factor
                    stale = 0
    return history


def write_history_csv(history: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for h in history:
            writer.writerow([h.epoch, repr(h.train_loss), repr(h.train_acc), repr(h.val_loss), repr(h.val_acc)])


@dataclass
class EvalReport:
    confusion_matrix: np.ndarray  # rows: true class, columns: predicted
    class_names: list[str] | None = None

    @property
    def total(self) -> int:
        return int(self.confusion_matrix.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion_matrix) / self.total)

    @property
    def precision(self) -> np.ndarray:
        col = self.confusion_matrix.sum(axis=0)
        return np.divide(np.diag(self.confusion_matrix), col, out=np.zeros(len(col)), where=col > 0)

    @property
    def recall(self) -> np.ndarray:
        row = self.confusion_matrix.sum(axis=1)
        return np.divide(np.diag(self.confusion_matrix), row, out=np.zeros(len(row)), where=row > 0)

    def to_dict(self) -> dict:
        k = self.confusion_matrix.shape[0]
        return {
            "accuracy": self.accuracy,
            "num_classes": k,
            "matrix": [int(v) for v in self.confusion_matrix.ravel()],
            "class_names": self.class_names or [str(i) for i in range(k)],
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def report_from_labels(true: Iterable[int], predicted: Iterable[int], num_classes: int,
                       class_names: list[str] | None = None) -> EvalReport:
    true = np.asarray(list(true), dtype=np.int64)
    predicted = np.asarray(list(predicted), dtype=np.int64)
    if true.size == 0:
        raise ArgumentError("cannot evaluate an empty dataset")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (true, predicted), 1)
    return EvalReport(matrix, class_names)


def report_from_probabilities(probs: np.ndarray, one_hot: np.ndarray,
                              class_names: list[str] | None = None) -> EvalReport:
    probs = np.asarray(probs)
    if probs.size == 0:
        raise ArgumentError("cannot evaluate an empty dataset")
    return report_from_labels(np.asarray(one_hot).argmax(axis=1), argmax_lowest(probs), probs.shape[1], class_names)


def evaluate(graph: LayerGraph, data, class_names: list[str] | None = None, batch_size: int = 64) -> EvalReport:
    x, y = data
    if len(x) == 0:
        raise ArgumentError("cannot evaluate an empty dataset")
    x, y = _check_data(graph, data, "evaluation")
    return report_from_probabilities(predict(graph, x, batch_size), y, class_names)


def transfer_train(graph: LayerGraph, train_data, val_data, config: TrainConfig | None = None,
                   head_epochs: int = 5) -> list[EpochStats]:
    """Frozen-base warm-up for ``head_epochs``, then fine-tune everything.

    ``config.epochs`` is the total across both phases; the second phase uses
    ``config.seed + 1`` for its shuffles and a fresh Adam state.
    """
    config = config or TrainConfig()
    if not 0 < head_epochs < config.epochs:
        raise ConfigError(f"head_epochs must lie in (0, {config.epochs}), got {head_epochs}")
    if graph.base_size is None:
        raise StructureError("transfer_train needs a head-replaced graph")
    kwargs = {k: getattr(config, k) for k in ("batch_size", "learning_rate", "lr_schedule",
                                              "plateau_factor", "plateau_patience")}
    warm = fit(graph, train_data, val_data,
               TrainConfig(epochs=head_epochs, seed=config.seed, freeze_base=True, **kwargs))
    set_trainable(graph, "all", True)
    tune = fit(graph, train_data, val_data,
               TrainConfig(epochs=config.epochs - head_epochs, seed=config.seed + 1, freeze_base=False, **kwargs))
    for row in tune:
        row.epoch += head_epochs
    return warm + tune

"""Adam, the epoch loop and classification metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import layers as L
from .data import WindowSet
from .models import Decisions, ModelParams, forward, init_canet, init_gcn_canet, predict_proba, project_windows
from .numeric import DimensionError, Parameter, Tape

log = logging.getLogger(__name__)

MODEL_KINDS = ("canet", "gcn-canet")


@dataclass
class TrainConfig:
    model: str = "canet"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    hidden_size: int = 8
    embed_size: int = 8
    lstm_layers: int = 3
    gcn_hidden: int = 16
    gcn_layers: int = 3
    bottleneck: int = 0  # 0: same as the component count
    softmax_axis: str = "component"
    vec_order: str = "column"
    gc_wiring: str = "temporal-attention"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.learning_rate < 0 or self.epsilon <= 0:
            raise ValueError("learning_rate must be >= 0 and epsilon > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def decisions(self) -> Decisions:
        return Decisions(self.softmax_axis, self.vec_order, self.gc_wiring)

    def dim_overrides(self) -> dict:
        return {
            "K": self.hidden_size,
            "E": self.embed_size,
            "D": self.bottleneck,
            "lstm_layers": self.lstm_layers,
            "gcn_hidden": self.gcn_hidden,
            "gcn_layers": self.gcn_layers,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def init_model(config: TrainConfig, windows: WindowSet) -> ModelParams:
    """Fresh parameters shaped for ``windows``' registry.

    The init stream is seeded from ``config.seed`` independently of the
    shuffling stream, so the epoch count never changes initialization.
    """
    rng = np.random.default_rng([config.seed, 0])
    T = windows.length
    if config.model == "canet":
        return init_canet(windows.registry, T, rng, config.decisions, **config.dim_overrides())
    if not windows.registry.has_skeleton() or windows.joints is None:
        raise ValueError(f"GCN-CANet needs the joints modality; components are {windows.registry.names}")
    others = windows.registry.without_modality("joints")
    return init_gcn_canet(others, T, rng, config.decisions, **config.dim_overrides())


# -- Adam ----------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(grads) != len(params) or len(state.m) != len(params):
        raise DimensionError(f"{len(params)} parameters, {len(grads)} gradients, {len(state.m)} moment slots")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise DimensionError(f"gradient shape {np.shape(g)} != parameter {p.name} shape {p.shape}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)


# -- metrics -------------------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float
    confusion: list[list[int]]  # rows: true class, columns: predicted
    absent_classes: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(sum(map(sum, self.confusion)))

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_predictions(preds, labels, n_classes: int = 2) -> Metrics:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("need equally many predictions and labels, at least one")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, preds), 1)
    prec, rec, f1, absent = [], [], [], []
    for k in range(n_classes):
        tp = conf[k, k]
        predicted = conf[:, k].sum()
        actual = conf[k, :].sum()
        p = tp / predicted if predicted else 0.0
        r = tp / actual if actual else 0.0
        prec.append(float(p))
        rec.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r > 0 else 0.0)
        if actual == 0 and predicted == 0:
            absent.append(k)
    return Metrics(
        accuracy=float(np.trace(conf) / conf.sum()),
        precision=prec,
        recall=rec,
        f1=f1,
        macro_f1=float(np.mean(f1)),
        confusion=conf.tolist(),
        absent_classes=absent,
    )


def evaluate(params: ModelParams, windows: WindowSet) -> Metrics:
    if len(windows) == 0:
        raise ValueError("cannot evaluate on an empty window set")
    probs = predict_proba(params, windows)
    return metrics_from_predictions(probs.argmax(axis=1), windows.labels, params.dims.N)


# -- training loop --------------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float | None = None
    test_macro_f1: float | None = None


@dataclass
class History:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "epochs": [asdict(e) for e in self.epochs], "final": self.final}

    @property
    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]


def batch_loss(params: ModelParams, batch: WindowSet):
    p, _ = forward(params, batch)
    return L.cross_entropy(p, batch.labels)


def fit(
    config: TrainConfig,
    train: WindowSet,
    test: WindowSet | None = None,
    params: ModelParams | None = None,
    callback=None,
) -> tuple[ModelParams, History]:
    """Train with Adam on mean-per-batch cross-entropy.

    Returns the final parameters and a history holding the per-epoch mean
    training loss and, when ``test`` is given, test accuracy and macro-F1.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    if params is None:
        params = init_model(config, train)
    train = project_windows(params, train)
    if test is not None and len(test):
        test = project_windows(params, test)
    else:
        test = None
    plist = params.parameters()
    state = AdamState.zeros(plist)
    shuffle = np.random.default_rng([config.seed, 1])
    history = History(config.to_dict())
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            batch = train.subset(order[s : s + config.batch_size])
            with Tape() as tape:
                loss = batch_loss(params, batch)
            grads = tape.backward(loss)
            adam_step(plist, [grads[p] for p in plist], state, config)
            total += loss.item() * len(batch)
        record = EpochRecord(epoch, total / n)
        if test is not None:
            m = evaluate(params, test)
            record.test_accuracy, record.test_macro_f1 = m.accuracy, m.macro_f1
        history.epochs.append(record)
        log.info(
            "epoch %d loss %.4f acc %s", epoch, record.train_loss,
            "-" if record.test_accuracy is None else f"{record.test_accuracy:.4f}",
        )
        if callback is not None:
            callback(record, params)
    if test is not None:
        history.final = evaluate(params, test).to_dict()
    return params, history


def smoothed_monotone(losses: Sequence[float], width: int = 5) -> bool:
    """Whether the ``width``-epoch moving average never increases."""
    if len(losses) < width:
        return True
    avg = np.convolve(np.asarray(losses), np.ones(width) / width, mode="valid")
    return bool(np.all(np.diff(avg) <= 0))

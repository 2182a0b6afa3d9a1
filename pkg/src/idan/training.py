"""Bray-Curtis loss, confusion-matrix metrics, training and evaluation loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .idtn import save_checkpoint
from .optim import OptimizerState, optimizer_step
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

BCD_EPS = 1e-7


class NumericalError(ArithmeticError):
    pass


def bcd_loss(x: Tensor, y) -> Tensor:
    """Bray-Curtis dissimilarity sum|x - y| / (sum x + sum y + eps) over all pixels."""
    y = T.as_tensor(y)
    if x.shape != y.shape:
        raise T.ShapeError(f"bcd_loss: prediction {x.shape} vs label {y.shape}")
    num = T.reduce_sum(T.abs(x - y))
    den = T.reduce_sum(x) + T.reduce_sum(y) + BCD_EPS
    return num / den


def binarize(change_map, threshold: float = 0.5) -> np.ndarray:
    c = change_map.data if isinstance(change_map, Tensor) else np.asarray(change_map)
    return (c > threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


def confusion(pred, label) -> ConfusionCounts:
    p = np.asarray(pred) != 0
    t = np.asarray(label) != 0
    if p.shape != t.shape:
        raise ValueError(f"confusion: prediction {p.shape} vs label {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp=tp, tn=int(p.size) - tp - fp - fn, fp=fp, fn=fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    degenerate: tuple = ()

    def line(self) -> str:
        return (f"accuracy={self.accuracy:.4f} precision={self.precision:.4f} "
                f"recall={self.recall:.4f} f1={self.f1:.4f}")


def metrics(counts: ConfusionCounts) -> MetricsReport:
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    degenerate = []

    def ratio(name, num, den):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    return MetricsReport(
        accuracy=ratio("accuracy", tp + tn, tp + tn + fp + fn),
        precision=ratio("precision", tp, tp + fp),
        recall=ratio("recall", tp, tp + fn),
        f1=ratio("f1", 2 * tp, 2 * tp + fp + fn),
        counts=counts,
        degenerate=tuple(degenerate),
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    seed: int = 0
    threshold: float = 0.5
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


@dataclass
class Prepared:
    """A sample with its cached prior maps, ready for batching."""

    img_a: np.ndarray
    img_b: np.ndarray
    label: np.ndarray
    fd: np.ndarray
    ed: np.ndarray


def prepare(samples: Sequence, builder) -> list:
    """Build FD/ED maps once per sample; ``builder(img_a, img_b) -> (fd, ed)``."""
    out = []
    for s in samples:
        fd, ed = builder(s.image_before, s.image_after)
        out.append(Prepared(s.image_before, s.image_after, s.label, fd, ed))
    return out


def _stack(batch: list) -> tuple:
    a = np.stack([p.img_a for p in batch]).astype(np.float32)
    b = np.stack([p.img_b for p in batch]).astype(np.float32)
    y = np.stack([p.label for p in batch])[:, None].astype(np.float32)
    fd = np.stack([p.fd for p in batch]).astype(np.float32)
    ed = np.stack([p.ed for p in batch])[:, None]
    return a, b, y, fd, ed


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def train(model, dataset: Sequence[Prepared], cfg: TrainConfig, val: Optional[Sequence[Prepared]] = None,
          on_log=None) -> TrainResult:
    """Minimise BCD over ``dataset``; one log line ``epoch=<n> loss=<mean> [f1=<val f1>]`` per epoch."""
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState(cfg.optimizer, cfg.learning_rate)
    result = TrainResult(model)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            a, b, y, fd, ed = _stack(batch)
            T.zero_grad(model.params)
            loss = bcd_loss(model(a, b, fd, ed), y)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            loss.backward()
            optimizer_step(state, model.params)
            total += value * len(batch)
            count += len(batch)
        mean = total / count
        result.losses.append(mean)
        line = f"epoch={epoch} loss={mean:.6f}"
        if val:
            line += f" f1={evaluate(model, val, cfg.threshold).f1:.4f}"
        result.log.append(line)
        log.info(line)
        if on_log is not None:
            on_log(line)
    T.zero_grad(model.params)
    if cfg.checkpoint:
        save_checkpoint(cfg.checkpoint, model.params)
    return result


def predict(model, dataset: Sequence[Prepared], batch_size: int = 8) -> list:
    out = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            a, b, _, fd, ed = _stack(list(dataset[start:start + batch_size]))
            out.extend(model(a, b, fd, ed).data[:, 0])
    return out


def evaluate(model, dataset: Sequence[Prepared], threshold: float = 0.5, batch_size: int = 8) -> MetricsReport:
    """Confusion counts pooled over every pixel of every sample, then one metrics call."""
    counts = ConfusionCounts()
    for prob, sample in zip(predict(model, dataset, batch_size), dataset):
        counts = counts + confusion(binarize(prob, threshold), sample.label)
    return metrics(counts)

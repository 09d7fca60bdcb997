"""Loss, Adam, learning-rate schedule, early stopping and the training loop.

The protocol: Adam at initial rate 0.001, batches of 16, up to 40 epochs,
validation loss divided into a reduce-on-plateau schedule (factor 10,
floored at 1e-10) and early stopping; the parameters with the best
validation loss are returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, UsageError
from .model import (ModelConfig, ModelParams, backward_from_logits,
                    copy_params, forward, init_params, named_tensors,
                    params_from_arrays)
from .tensor import Tensor

#: A validation loss must drop below (best - IMPROVEMENT_TOL) to count as
#: an improvement, for both the plateau schedule and early stopping.
IMPROVEMENT_TOL = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 16
    lr_decay_factor: float = 10.0
    lr_plateau_patience: int = 3
    min_lr: float = 1e-10
    early_stop_patience: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if self.min_lr > self.learning_rate:
            raise UsageError("min_lr must not exceed learning_rate")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.lr_plateau_patience < 1 or self.early_stop_patience < 1:
            raise UsageError("patience values must be >= 1")
        if self.lr_decay_factor <= 1:
            raise UsageError("lr_decay_factor must exceed 1")


def cross_entropy(probs: Tensor, target: int) -> tuple[float, Tensor]:
    """Categorical cross-entropy of a probability vector.

    Returns (loss, gradient of the loss w.r.t. the logits), using the
    combined softmax + cross-entropy gradient probs - onehot(target).
    """
    c = probs.shape[0]
    if probs.rank != 1:
        raise DimensionError(f"probs must be rank 1, got {probs.shape}")
    if not 0 <= target < c:
        raise UsageError(f"target {target} out of range for {c} classes")
    p64 = probs.data.astype(np.float64)
    loss = -math.log(max(float(p64[target]), 1e-12))
    grad = p64.copy()
    grad[target] -= 1.0
    return loss, Tensor.wrap(grad.astype(probs.dtype))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        m = {name: np.zeros_like(t.data) for name, t in named_tensors(params)}
        v = {name: np.zeros_like(t.data) for name, t in named_tensors(params)}
        return cls(m=m, v=v, t=0)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-7) -> ModelParams:
    """One Adam update with bias correction, in place on params."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for (name, theta), (_, g) in zip(named_tensors(params), named_tensors(grads)):
        if theta.shape != g.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, "
                                 f"expected {theta.shape}")
        g64 = g.data.astype(np.float64)
        m64 = state.m[name].astype(np.float64) * beta1 + (1 - beta1) * g64
        v64 = state.v[name].astype(np.float64) * beta2 + (1 - beta2) * g64 * g64
        state.m[name][...] = m64
        state.v[name][...] = v64
        update = lr * (m64 / bc1) / (np.sqrt(v64 / bc2) + epsilon)
        theta.data[...] = (theta.data.astype(np.float64) - update)
    return params


class PlateauScheduler:
    """Divide the learning rate by a fixed factor after ``patience``
    consecutive epochs without validation-loss improvement, floored at
    ``min_lr``. The wait counter resets after each decay."""

    def __init__(self, initial_lr: float, factor: float = 10.0,
                 patience: int = 3, min_lr: float = 1e-10):
        self.lr = initial_lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def update(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the next epoch's lr."""
        if val_loss < self.best - IMPROVEMENT_TOL:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr / self.factor, self.min_lr)
                self.wait = 0
        return self.lr


class EarlyStopper:
    """True once validation loss has failed to improve for ``patience``
    consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.wait = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best - IMPROVEMENT_TOL:
            self.best = val_loss
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def replay_lr_schedule(val_losses, cfg: TrainConfig) -> list[float]:
    """Learning rate in effect at each epoch of a given val-loss sequence."""
    sched = PlateauScheduler(cfg.learning_rate, cfg.lr_decay_factor,
                             cfg.lr_plateau_patience, cfg.min_lr)
    out = []
    for v in val_losses:
        out.append(sched.lr)
        sched.update(v)
    return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_ndjson(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def from_ndjson(cls, path: str) -> "TrainLog":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(EpochRecord(**json.loads(line)))
        return cls(records=records)


def evaluate(params: ModelParams, records) -> tuple[float, float]:
    """Mean cross-entropy loss and accuracy over a list of WindowRecords."""
    if not records:
        raise UsageError("cannot evaluate on an empty dataset")
    total = 0.0
    correct = 0
    for rec in records:
        probs, _ = forward(params, rec.samples)
        loss, _ = cross_entropy(probs, rec.label)
        total += loss
        if int(np.argmax(probs.data)) == rec.label:
            correct += 1
    return total / len(records), correct / len(records)


def _mean_batch_grads(params: ModelParams, acc: dict[str, np.ndarray],
                      n: int) -> ModelParams:
    arrays = {name: (a / n).astype(np.float32) for name, a in acc.items()}
    return params_from_arrays(arrays, params.num_classes)


def batch_gradients(params: ModelParams, batch) -> tuple[ModelParams, float]:
    """Mean gradient over a batch of WindowRecords, plus the summed loss."""
    acc = {name: np.zeros(t.shape, dtype=np.float64)
           for name, t in named_tensors(params)}
    loss_sum = 0.0
    for rec in batch:
        probs, caches = forward(params, rec.samples)
        loss, grad_logits = cross_entropy(probs, rec.label)
        loss_sum += loss
        grads = backward_from_logits(params, caches, grad_logits)
        for name, g in named_tensors(grads):
            acc[name] += g.data
    return _mean_batch_grads(params, acc, len(batch)), loss_sum


def train(model_cfg: ModelConfig, train_records, val_records,
          cfg: TrainConfig, progress=None) -> tuple[ModelParams, TrainLog]:
    """Run the full training protocol.

    Training windows are reshuffled every epoch with the seeded generator;
    each batch applies one Adam step on the mean of its per-example
    gradients. Returns the parameters with the best validation loss.
    """
    if not train_records or not val_records:
        raise UsageError("train and validation datasets must be non-empty")
    for rec in list(train_records) + list(val_records):
        if not 0 <= rec.label < model_cfg.num_classes:
            raise UsageError(f"label {rec.label} out of range for "
                             f"{model_cfg.num_classes} classes")
        if rec.samples.shape[0] != model_cfg.input_length:
            raise UsageError(
                f"window length {rec.samples.shape[0]} does not match "
                f"configured input length {model_cfg.input_length}")

    rng = np.random.default_rng(cfg.rng_seed)
    params = init_params(model_cfg)
    state = AdamState.for_params(params)
    sched = PlateauScheduler(cfg.learning_rate, cfg.lr_decay_factor,
                             cfg.lr_plateau_patience, cfg.min_lr)
    stopper = EarlyStopper(cfg.early_stop_patience)
    log = TrainLog()
    best_loss = math.inf
    best_params = copy_params(params)
    lr = cfg.learning_rate
    n = len(train_records)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_records[i] for i in order[start:start + cfg.batch_size]]
            grads, loss_sum = batch_gradients(params, batch)
            epoch_loss += loss_sum
            adam_step(params, grads, state, lr, cfg.adam_beta1,
                      cfg.adam_beta2, cfg.adam_epsilon)
        val_loss, val_acc = evaluate(params, val_records)
        record = EpochRecord(epoch=epoch, train_loss=epoch_loss / n,
                             val_loss=val_loss, val_accuracy=val_acc, lr=lr)
        log.records.append(record)
        if progress is not None:
            progress(record)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = copy_params(params)
        lr = sched.update(val_loss)
        if stopper.update(val_loss):
            break
    return best_params, log

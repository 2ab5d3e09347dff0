"""Adam optimisation and the epoch loop with early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import make_batches
from .errors import ConfigError, ContractError, TrainingError
from .metrics import DEFAULT_DEV_METRIC, MetricReport, report
from .model import CsranModel, cross_entropy

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place.

    Parameters with ``trainable=False`` are skipped and get no moment
    state; rows in ``frozen_rows`` never move.
    """
    state.step += 1
    t = state.step
    for p, g in zip(params, grads):
        if not getattr(p, "trainable", True) or g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        frozen = getattr(p, "frozen_rows", None)
        if frozen is not None:
            g = np.where(frozen.reshape((-1,) + (1,) * (p.ndim - 1)), 0.0, g)
        m, v = state.moments.get(id(p), (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.moments[id(p)] = (m, v)
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if frozen is not None:
            update[frozen] = 0.0
        p.data -= update.astype(p.dtype)


def clip_global_norm(grads, max_norm):
    """Scale gradients so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None)))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = [None if g is None else g * scale for g in grads]
    return grads, norm


@dataclass
class TrainConfig:
    task_kind: str = "binary"
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    clip_norm: float = 5.0
    shuffle_seed: int = 0
    dev_metric: str = ""
    max_len: int = 64
    max_word_len: int = 16
    record_time: bool = False

    def metric(self):
        return self.dev_metric or DEFAULT_DEV_METRIC[self.task_kind]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_metric: float
    seconds: float | None = None

    def to_line(self):
        secs = "-" if self.seconds is None else f"{self.seconds:.3f}"
        return f"{self.epoch}\t{self.train_loss:.10f}\t{self.dev_metric:.10f}\t{secs}"


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_metric: float
    history: list

    def history_text(self):
        return "".join(r.to_line() + "\n" for r in self.history)


def state_dict(model):
    return {name: p.data.copy() for name, p in model.named_parameters()}


def load_state(model, state):
    for name, p in model.named_parameters():
        p.data = state[name].copy()


def evaluate(model: CsranModel, pairs, task_kind, batch_size=64, max_len=64, max_word_len=16) -> MetricReport:
    """Score encoded pairs and compute the task's metric family."""
    logits, labels, groups = [], [], []
    with T.no_grad():
        for batch in make_batches(pairs, batch_size, None, max_len, max_word_len):
            logits.append(model(batch).data)
            labels.append(batch.labels)
            groups.extend(batch.groups)
    return report(task_kind, np.concatenate(logits), np.concatenate(labels), groups)


def train(model: CsranModel, train_pairs, dev_pairs, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Fit ``model`` with Adam, keeping the parameters of the best dev epoch.

    Each epoch reshuffles with a seed derived from ``shuffle_seed`` and the
    epoch number; dropout draws from a generator seeded with
    ``shuffle_seed`` too, so a rerun reproduces the history exactly. The
    best parameters are loaded back into ``model`` before returning.
    """
    if config.epochs < 0:
        raise ConfigError("epochs", f"must be non-negative, got {config.epochs}")
    metric = config.metric()
    params = [p for p in model.parameters() if p.trainable]
    state = AdamState(lr=config.lr)
    dropout_rng = np.random.default_rng(config.shuffle_seed)
    best_state, best_epoch, best_metric = state_dict(model), 0, -np.inf
    history, stale, last_norm = [], 0, None

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        batches = make_batches(train_pairs, config.batch_size, config.shuffle_seed * 100003 + epoch,
                               config.max_len, config.max_word_len)
        total, count = 0.0, 0
        for i, batch in enumerate(batches):
            loss = cross_entropy(model(batch, training=True, rng=dropout_rng), batch.labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {i}; previous global grad norm {last_norm}"
                )
            model.zero_grad()
            loss.backward()
            grads, last_norm = clip_global_norm([p.grad for p in params], config.clip_norm)
            adam_step(params, grads, state)
            total += value * len(batch)
            count += len(batch)
        dev = evaluate(model, dev_pairs, config.task_kind, max_len=config.max_len,
                       max_word_len=config.max_word_len).values[metric]
        seconds = time.perf_counter() - start if config.record_time else None
        record = EpochRecord(epoch, total / max(count, 1), dev, seconds)
        history.append(record)
        log.info("epoch %d loss %.4f dev %s %.4f", epoch, record.train_loss, metric, dev)
        if on_epoch is not None:
            on_epoch(record)
        if dev > best_metric:
            best_state, best_epoch, best_metric, stale = state_dict(model), epoch, dev, 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    load_state(model, best_state)
    if best_epoch == 0:
        best_metric = float("nan")
    return TrainResult(best_state, best_epoch, float(best_metric), history)


def write_history(path, result: TrainResult):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(result.history_text())

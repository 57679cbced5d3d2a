"""Adam training loop over supervision rows with a held-out early stop on
statement top-1 accuracy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datagen import TrainingRow
from .model import (
    GuideModelParams,
    batch_loss_and_grads,
    forward_arrays,
    init_params,
    states_to_arrays,
)

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 10
    seed: int = 0
    disable_function_head: bool = False
    disable_drop_head: bool = False
    holdout_fraction: float = 0.1
    patience: int = 3


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0


def rows_to_batch(rows: list[TrainingRow], v: int, dtype=np.float32) -> dict:
    """Tensorize supervision rows. Embedding indices are kept int16-compact so
    large corpora stay in memory."""
    n = len(rows)
    k = rows[0].k
    idx = np.empty((n, k, v + 1, 20), dtype=np.int16)
    types = np.empty((n, k, v + 1), dtype=np.int8)
    stmt = np.empty(n, dtype=np.int64)
    func = np.empty(n, dtype=np.int64)
    drop_y = np.empty((n, v), dtype=dtype)
    drop_m = np.empty((n, v), dtype=dtype)
    for i, row in enumerate(rows):
        if row.v != v or row.k != k:
            raise ValueError("rows disagree on v or k")
        idx[i], types[i] = states_to_arrays(row.states, v)
        stmt[i] = row.next_statement
        func[i] = row.next_function
        drop_y[i] = row.drop_labels
        drop_m[i] = row.drop_mask
    return {"idx": idx, "types": types, "stmt": stmt, "func": func,
            "drop_y": drop_y, "drop_m": drop_m}


def _slice_batch(batch: dict, sel: np.ndarray) -> dict:
    return {key: arr[sel] for key, arr in batch.items()}


def _statement_accuracy(params: GuideModelParams, batch: dict, batch_size: int) -> float:
    n = len(batch["stmt"])
    if n == 0:
        return 0.0
    hits = 0
    for start in range(0, n, batch_size):
        sel = slice(start, start + batch_size)
        stmt_logp, _, _ = forward_arrays(params, batch["idx"][sel], batch["types"][sel])
        hits += int((stmt_logp.argmax(axis=1) == batch["stmt"][sel]).sum())
    return hits / n


class _Adam:
    def __init__(self, tensors: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for name, w in tensors.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * np.square(g)
            w -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def fit(
    rows: list[TrainingRow],
    config: TrainConfig,
    d: int = 20,
    block_layers: int = 10,
    dtype=np.float32,
) -> tuple[GuideModelParams, TrainHistory]:
    """Train from scratch on the given rows; returns the parameter snapshot
    with the best held-out statement accuracy (or the final parameters when
    no rows are held out)."""
    if not rows:
        raise ValueError("no training rows")
    v = rows[0].v
    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = init_params(v, d=d, block_layers=block_layers, seed=config.seed, dtype=dtype)

    data = rows_to_batch(rows, v, dtype=dtype)
    n = len(rows)
    perm = rng.permutation(n)
    n_val = int(n * config.holdout_fraction)
    val = _slice_batch(data, perm[:n_val])
    train = _slice_batch(data, perm[n_val:])
    n_train = len(train["stmt"])
    if n_train == 0:
        raise ValueError("holdout fraction leaves no training rows")

    opt = _Adam(params.tensors, config.learning_rate)
    history = TrainHistory()
    best: GuideModelParams | None = None
    best_acc = -1.0
    stale = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        total = 0.0
        batches = 0
        for start in range(0, n_train, config.batch_size):
            sel = order[start : start + config.batch_size]
            loss_val, grads, _ = batch_loss_and_grads(
                params,
                _slice_batch(train, sel),
                disable_function_head=config.disable_function_head,
                disable_drop_head=config.disable_drop_head,
            )
            opt.step(params.tensors, grads)
            total += loss_val
            batches += 1
        for name, w in params.tensors.items():
            if not np.isfinite(w).all():
                raise FloatingPointError(f"non-finite values in {name} after epoch {epoch}")
        history.train_loss.append(total / batches)
        history.epochs_run = epoch + 1

        if n_val:
            acc = _statement_accuracy(params, val, config.batch_size)
            history.val_accuracy.append(acc)
            log.info("epoch %d: loss %.4f, held-out top-1 %.4f", epoch, total / batches, acc)
            if acc > best_acc:
                best_acc = acc
                best = params.copy()
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
        else:
            log.info("epoch %d: loss %.4f", epoch, total / batches)

    if best is not None:
        return best, history
    history.best_epoch = history.epochs_run - 1
    return params, history


def train(rows: list[TrainingRow], config: TrainConfig, **kwargs) -> GuideModelParams:
    params, _ = fit(rows, config, **kwargs)
    return params

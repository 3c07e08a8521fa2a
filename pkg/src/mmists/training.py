"""Loss, metrics, the adaptive-moment optimizer, and the training loop.

Training is deterministic under (seed, config, data): batches are drawn from
a seeded generator, per-sample gradients accumulate in fixed order, and the
optimizer walks parameters in insertion order. The embedding matrices are
constants; no gradient ever reaches them.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels, model

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class EmptyQuerySet(Exception):
    pass


class EmptySplit(Exception):
    pass


class NonFiniteLoss(Exception):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 100
    patience: int = 20
    seed: int = 0

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class Metrics:
    mse: float
    mae: float
    count: int

    @property
    def scaled_mse(self):
        return self.mse * 1e3

    @property
    def scaled_mae(self):
        return self.mae * 1e2

    def as_dict(self):
        return {"mse": self.mse, "mae": self.mae, "count": self.count,
                "scaled_mse": self.scaled_mse, "scaled_mae": self.scaled_mae}


def mse_loss(predictions: ad.Tensor, targets) -> ad.Tensor:
    """Mean squared error over all queries, as a scalar tape tensor."""
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if tgt.size == 0:
        raise EmptyQuerySet("loss needs at least one query")
    diff = ad.sub(predictions, ad.constant(tgt))
    return ad.masked_mean(ad.mul(diff, diff), np.ones(tgt.shape[0]))


class Adam:
    """Adaptive-moment optimizer with decay rates 0.9/0.999 and eps 1e-8."""

    def __init__(self, store: ad.ParamStore, lr: float):
        self.store = store
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for name in self.store.names():
            kernels.adam_update(self.store.params[name], self.store.grads[name],
                                self.m[name], self.v[name], self.lr,
                                ADAM_BETA1, ADAM_BETA2, ADAM_EPS, bc1, bc2)


def gather_predictions(store, prepared_list, cfg, variant="full"):
    preds, targets = [], []
    for prep in prepared_list:
        res = model.forward(store, prep, cfg, tape=None, variant=variant)
        keep = ~np.isnan(prep.target)
        preds.append(res.predictions.data.reshape(-1)[keep])
        targets.append(prep.target[keep])
    return np.concatenate(preds), np.concatenate(targets)


def evaluate_prepared(store, prepared_list, cfg, variant="full") -> Metrics:
    """Aggregate MSE/MAE over every query of every sample in the split."""
    if not prepared_list:
        raise EmptySplit("evaluation split is empty")
    preds, targets = gather_predictions(store, prepared_list, cfg, variant)
    if targets.size == 0:
        raise EmptyQuerySet("evaluation split has no queries with targets")
    err = preds - targets
    return Metrics(mse=float(np.mean(err ** 2)), mae=float(np.mean(np.abs(err))),
                   count=int(targets.size))


def mean_baseline_metrics(train_prepared, eval_prepared) -> Metrics:
    """Per-variable training-mean predictor, the sanity floor for learning."""
    n_vars = train_prepared[0].t.shape[0]
    sums = np.zeros(n_vars)
    counts = np.zeros(n_vars)
    for prep in train_prepared:
        for v, t in zip(prep.query_var, prep.target):
            if not np.isnan(t):
                sums[v] += t
                counts[v] += 1
    means = np.divide(sums, counts, out=np.zeros(n_vars), where=counts > 0)
    errs = []
    for prep in eval_prepared:
        keep = ~np.isnan(prep.target)
        errs.append(means[prep.query_var[keep]] - prep.target[keep])
    err = np.concatenate(errs)
    return Metrics(mse=float(np.mean(err ** 2)), mae=float(np.mean(np.abs(err))),
                   count=int(err.size))


@dataclass
class TrainResult:
    history: list
    best_val_mse: float
    best_epoch: int


def train(store, train_prepared, val_prepared, model_cfg, train_cfg: TrainConfig,
          variant="full", log_fh=None) -> TrainResult:
    """Optimize in place; afterwards the store holds the best-validation params."""
    train_cfg.validate()
    if not train_prepared:
        raise EmptySplit("training split is empty")
    adam = Adam(store, train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    best_val = np.inf
    best_params = store.copy_params()
    best_epoch = 0
    stale = 0
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_prepared))
        epoch_losses = []
        for b_start in range(0, len(order), train_cfg.batch_size):
            batch = order[b_start:b_start + train_cfg.batch_size]
            batch_id = b_start // train_cfg.batch_size
            store.zero_grads()
            for idx in batch:
                prep = train_prepared[idx]
                tape = ad.Tape()
                try:
                    res = model.forward(store, prep, model_cfg, tape, variant)
                    loss = mse_loss(res.predictions, prep.target)
                    ad.backward(ad.scalar_mul(loss, 1.0 / len(batch)))
                except ad.NonFiniteResult as exc:
                    raise NonFiniteLoss(
                        f"non-finite loss in epoch {epoch}, batch {batch_id}, "
                        f"sample {prep.sample_id}") from exc
                epoch_losses.append(loss.item())
            adam.step()
        val = evaluate_prepared(store, val_prepared, model_cfg, variant)
        entry = {"epoch": epoch,
                 "train_loss": float(np.mean(epoch_losses)),
                 "val_mse": val.mse,
                 "val_mae": val.mae,
                 "seconds": time.perf_counter() - t0}
        history.append(entry)
        if log_fh is not None:
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()
        if val.mse < best_val:
            best_val = val.mse
            best_params = store.copy_params()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > train_cfg.patience:
                break
    store.load_values(best_params)
    return TrainResult(history=history, best_val_mse=float(best_val),
                       best_epoch=best_epoch)

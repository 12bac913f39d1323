"""Mini-batch training loop with early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..data import Dataset, shuffle_epoch
from ..errors import TrainingError
from ..rng import hash_uniform, keyed_generator
from .engine import backward, batch_loss, dropout_masks, forward_batch, raw_outputs
from .optim import Adam
from .params import ModelParams, init_params
from .spec import ModelSpec, TrainConfig

log = logging.getLogger(__name__)


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    best_epoch: int = -1
    epochs_run: int = 0
    n_train: int = 0
    n_val: int = 0

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "initial_train_loss": self.initial_train_loss,
            "initial_val_loss": self.initial_val_loss,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "n_train": self.n_train,
            "n_val": self.n_val,
        }


def validation_mask(row_ids: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Rows held out for early stopping; depends only on row ids, never on order."""
    if fraction <= 0:
        return np.zeros(len(row_ids), dtype=bool)
    return hash_uniform(seed, "early-stopping", row_ids) < fraction


def mean_loss(spec: ModelSpec, params: ModelParams, cat, num, y, chunk: int = 8192) -> float:
    if len(y) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(y), chunk):
        out = raw_outputs(spec, params, cat[s:s + chunk], num[s:s + chunk])
        value, _ = batch_loss(out, y[s:s + chunk], spec)
        total += value * len(out)
    return total / len(y)


def fit_arrays(spec: ModelSpec, config: TrainConfig, cat, num, y, row_ids, *,
               init_seed: int, shuffle_seed: int | None = None,
               dropout_seed: int | None = None,
               init: ModelParams | None = None) -> tuple[ModelParams, TrainingHistory]:
    """Train on column arrays. See :func:`train` for the dataset-level entry point."""
    cat = np.asarray(cat, dtype=np.int64)
    num = np.asarray(num, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise TrainingError("cannot train on an empty dataset")
    val = validation_mask(np.asarray(row_ids), config.validation_fraction, config.validation_seed)
    if val.all():
        val[:] = False
    tr_idx = np.flatnonzero(~val)
    va_idx = np.flatnonzero(val)
    tc, tn, ty = cat[tr_idx], num[tr_idx], y[tr_idx]
    vc, vn, vy = cat[va_idx], num[va_idx], y[va_idx]

    params = init.copy() if init is not None else init_params(spec, init_seed)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    hist = TrainingHistory(n_train=len(tr_idx), n_val=len(va_idx))
    use_dropout = spec.dropout_rate > 0
    if use_dropout and dropout_seed is None:
        dropout_seed = init_seed

    with threadpool_limits(limits=1):
        hist.initial_train_loss = mean_loss(spec, params, tc, tn, ty)
        hist.initial_val_loss = mean_loss(spec, params, vc, vn, vy)
        best = params.copy()
        best_val = hist.initial_val_loss if len(va_idx) else float("inf")
        since_best = 0
        bs = config.batch_size
        for epoch in range(config.max_epochs):
            order = shuffle_epoch(len(ty), shuffle_seed, epoch)
            total = 0.0
            drng = keyed_generator(dropout_seed, "dropout-train", epoch) if use_dropout else None
            for b, s in enumerate(range(0, len(order), bs)):
                idx = order[s:s + bs]
                masks = dropout_masks(spec, len(idx), drng) if use_dropout else None
                cache = forward_batch(spec, params, tc[idx], tn[idx], masks=masks)
                value, dout = batch_loss(cache.out, ty[idx], spec)
                if not np.isfinite(value):
                    raise TrainingError("non-finite training loss", epoch=epoch, batch=b)
                grads = backward(spec, params, cache, tc[idx], dout)
                opt.step(grads)
                total += value * len(idx)
            hist.train_loss.append(total / len(ty))
            hist.epochs_run = epoch + 1
            if len(va_idx) == 0:
                best = params.copy()
                hist.best_epoch = epoch
                continue
            v = mean_loss(spec, params, vc, vn, vy)
            if not np.isfinite(v):
                raise TrainingError("non-finite validation loss", epoch=epoch)
            hist.val_loss.append(v)
            if v < best_val:
                best_val = v
                best = params.copy()
                hist.best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best > config.patience:
                    break
    log.debug("trained %d epochs, best %d", hist.epochs_run, hist.best_epoch)
    return best.freeze(), hist


def train(spec: ModelSpec, config: TrainConfig, data: Dataset, seeds) -> tuple[ModelParams, TrainingHistory]:
    """Train a target model on ``data`` in its stored order.

    ``seeds`` needs ``init_seed`` and ``shuffle_seed`` (``None`` keeps the
    natural order every epoch); ``dropout_seed`` is read when present.
    """
    if len(data) == 0:
        raise TrainingError("cannot train on an empty dataset")
    return fit_arrays(
        spec, config, data.cat, data.num, data.labels, data.row_ids,
        init_seed=seeds.init_seed,
        shuffle_seed=getattr(seeds, "shuffle_seed", None),
        dropout_seed=getattr(seeds, "dropout_seed", None),
    )

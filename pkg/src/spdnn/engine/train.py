"""Deterministic training loop: seeded init and shuffling, per-epoch loss rows.

All randomness flows from the single seed in TrainConfig; two runs with the
same config produce bitwise-identical parameter trajectories and loss
sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..merge import MergedNetworkSpec
from . import ops
from .network import NumericError, ParameterStore, run_backward, run_forward
from .optim import nesterov_step

EVAL_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def _as_batches(images, masks, idx, dtype):
    x = images[idx]
    if x.ndim == 3:
        x = x[:, None, :, :]
    t = masks[idx]
    if t.ndim == 3:
        t = t[:, None, :, :]
    return x.astype(dtype, copy=False), t.astype(dtype, copy=False)


def evaluate_loss(spec, store, images, masks, idx, batch_size=EVAL_BATCH):
    """Mean loss over the given samples with eval-mode batch norm."""
    total, seen = 0.0, 0
    for start in range(0, len(idx), batch_size):
        sel = idx[start : start + batch_size]
        x, t = _as_batches(images, masks, sel, store.dtype)
        pred, _ = run_forward(spec, store, x, mode="eval")
        loss, _ = ops.bce_loss(pred, t)
        total += loss * len(sel)
        seen += len(sel)
    return total / seen


def train_network(
    spec: MergedNetworkSpec,
    images,
    masks,
    train_idx,
    val_idx,
    cfg: TrainConfig,
    log=None,
):
    """Train with Nesterov momentum on binary cross-entropy.

    Returns (store, rows) where rows is one (epoch, train_loss, val_loss)
    triple per epoch.  Train loss is the batch-size weighted mean of the
    batch losses in the order they were optimized.
    """
    rng = np.random.default_rng(cfg.seed)
    store = ParameterStore.init(spec, rng, cfg.dtype)
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(train_idx)
        total, seen = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            x, t = _as_batches(images, masks, sel, cfg.dtype)
            pred, caches = run_forward(spec, store, x, mode="train")
            loss, dpred = ops.bce_loss(pred, t)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss in epoch {epoch}")
            grads = run_backward(spec, store, caches, dpred)
            nesterov_step(store.params, store.velocities, grads,
                          cfg.learning_rate, cfg.momentum)
            total += loss * len(sel)
            seen += len(sel)
        train_loss = total / seen
        val_loss = evaluate_loss(spec, store, images, masks, val_idx) if len(val_idx) else float("nan")
        rows.append((epoch, train_loss, val_loss))
        if log is not None:
            log(f"epoch {epoch}/{cfg.epochs}  train {train_loss:.6f}  val {val_loss:.6f}")
    return store, rows


def loss_csv_text(rows) -> str:
    """Loss history as CSV with 9 significant digits."""
    lines = ["epoch,train_loss,val_loss"]
    for epoch, train_loss, val_loss in rows:
        lines.append(f"{epoch},{train_loss:.9g},{val_loss:.9g}")
    return "\n".join(lines) + "\n"

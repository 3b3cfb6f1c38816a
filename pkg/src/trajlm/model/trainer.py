"""Training loop over tokenized trajectory lines.

Each line is one example; batches are padded to the longest member and pad
positions are masked out of the loss. Line order reshuffles every epoch from
a dedicated RNG so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, TrainConfig
from .network import (
    ContextOverflowError,
    Model,
    NonFiniteLossError,
    param_norms,
)
from .optim import Adam, clip_global_norm, lr_at

PAD_ID = 0  # any valid id works: pad positions never contribute loss


def pad_batch(sequences: list[list[int]], pad_id: int = PAD_ID):
    """(ids, targets, mask) arrays for next-token prediction on ragged lines."""
    width = max(len(s) for s in sequences)
    n = len(sequences)
    ids = np.full((n, width - 1), pad_id, dtype=np.int64)
    targets = np.full((n, width - 1), pad_id, dtype=np.int64)
    mask = np.zeros((n, width - 1), dtype=np.float64)
    for row, seq in enumerate(sequences):
        arr = np.asarray(seq, dtype=np.int64)
        ids[row, : len(seq) - 1] = arr[:-1]
        targets[row, : len(seq) - 1] = arr[1:]
        mask[row, : len(seq) - 1] = 1.0
    return ids, targets, mask


@dataclass
class TrainResult:
    model: Model
    losses: list[float]
    final_lr: float


def train(
    model: Model,
    sequences: list[list[int]],
    tcfg: TrainConfig,
) -> TrainResult:
    """Adam + warmup/cosine + clip-1.0 loop for `tcfg.steps` batches."""
    if not sequences:
        raise ValueError("no training sequences")
    for i, seq in enumerate(sequences):
        if len(seq) > model.config.context_length + 1:
            raise ContextOverflowError(
                f"line {i} has {len(seq)} tokens; context allows "
                f"{model.config.context_length + 1}"
            )
        if len(seq) < 2:
            raise ValueError(f"line {i} too short to form a prediction pair")

    order_rng = np.random.default_rng((tcfg.seed, 1))
    dropout_rng = np.random.default_rng((tcfg.seed, 2))
    optimizer = Adam(model.params, tcfg.beta1, tcfg.beta2, tcfg.eps)
    losses: list[float] = []
    order: list[int] = []
    lr = tcfg.lr
    for step in range(tcfg.steps):
        while len(order) < tcfg.batch_size:
            epoch = list(range(len(sequences)))
            order_rng.shuffle(epoch)
            order.extend(epoch)
        take, order = order[: tcfg.batch_size], order[tcfg.batch_size :]
        batch = [sequences[i] for i in take]
        ids, targets, mask = pad_batch(batch)
        loss, grads = model.loss_and_grads(
            ids, targets, mask,
            dropout_rng if model.config.dropout > 0 else None,
        )
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"non-finite loss at step {step}; parameter norms: "
                f"{param_norms(model.params)}"
            )
        clip_global_norm(grads, tcfg.clip_norm)
        lr = lr_at(step, tcfg.lr, tcfg.warmup_steps, tcfg.steps, tcfg.min_lr_ratio)
        optimizer.step(model.params, grads, lr)
        losses.append(loss)
    return TrainResult(model, losses, lr)


def eval_loss(model: Model, sequences: list[list[int]], batch_size: int = 64) -> float:
    """Mean per-token cross-entropy over a corpus, no gradient work."""
    total, count = 0.0, 0.0
    for start in range(0, len(sequences), batch_size):
        batch = sequences[start : start + batch_size]
        ids, targets, mask = pad_batch(batch)
        logits = model.forward(ids).astype(np.float64)
        m = logits.max(axis=-1, keepdims=True)
        logz = m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
        total += float(((logz[..., 0] - picked) * mask).sum())
        count += float(mask.sum())
    return total / count


def token_accuracy(model: Model, sequences: list[list[int]]) -> float:
    """Greedy next-token accuracy over all positions of all lines."""
    hit, count = 0, 0
    for seq in sequences:
        ids, targets, mask = pad_batch([seq])
        pred = model.forward(ids).argmax(axis=-1)
        live = mask[0] > 0
        hit += int((pred[0][live] == targets[0][live]).sum())
        count += int(live.sum())
    return hit / max(count, 1)

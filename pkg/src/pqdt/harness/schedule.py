"""Learning-rate schedule: linear warmup, then cosine decay."""

from __future__ import annotations

import math


def lr_at(epoch: float, lr: float, lr_min: float, warmup: int, total: int) -> float:
    """Learning rate at ``epoch`` in [0, total].

    Rises linearly from ``lr_min`` to ``lr`` over ``warmup`` epochs, then
    follows a half cosine from ``lr`` down to ``lr_min`` at ``total``.
    Without warmup the cosine starts at ``lr`` on epoch 0.
    """
    if not 0 <= epoch <= total:
        raise ValueError(f"lr_at: epoch {epoch} outside [0, {total}]")
    if not 0 <= warmup <= total:
        raise ValueError(f"lr_at: warmup {warmup} outside [0, {total}]")
    if warmup and epoch < warmup:
        return lr_min + (lr - lr_min) * epoch / warmup
    span = total - warmup
    if span == 0:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * (epoch - warmup) / span))

"""Adversarial client behaviour: update, label and alarm-channel manipulation."""

from __future__ import annotations

import numpy as np

from .domain import AttackSpec
from .learner import Dataset
from .security import AlarmDecision

FABRICATED_GLOBAL_ACC = 0.0


def poison_update(spec: AttackSpec, honest_update: np.ndarray, prev_global_delta: np.ndarray | None = None) -> np.ndarray:
    """Update a malicious client uploads in place of ``honest_update``.

    ``sign-flip`` scales by the (negative) sign constant. ``adaptive`` pushes
    against the benign direction, estimated by the previous round's realized
    global delta; in the first round it falls back to the negated honest
    update. Data-level attacks pass the update through.
    """
    if spec.kind == "sign-flip":
        return spec.sign_constant * honest_update
    if spec.kind == "adaptive":
        if prev_global_delta is None or not np.any(prev_global_delta):
            return -spec.beta * honest_update
        return -spec.beta * prev_global_delta
    return honest_update


def poison_labels(spec: AttackSpec, shard: Dataset) -> Dataset:
    """Relabelled copy of ``shard`` for the data-level attacks."""
    if len(shard) == 0:
        raise ValueError("empty shard")
    y = shard.y.copy()
    if spec.kind == "label-flip":
        y = shard.num_classes - 1 - y
    elif spec.kind == "targeted":
        y[y == spec.source] = spec.target
    else:
        return shard
    return Dataset(shard.X, y, shard.num_classes)


def malicious_alarm(policy: str, honest: AlarmDecision) -> AlarmDecision:
    if policy == "honest":
        return honest
    if policy == "always-alarm":
        return AlarmDecision(1, FABRICATED_GLOBAL_ACC, honest.local_acc)
    if policy == "never-alarm":
        return AlarmDecision(0, honest.global_acc, honest.local_acc)
    raise ValueError(f"unknown alarm policy {policy!r}")

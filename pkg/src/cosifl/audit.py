"""Membership-inference auditing and the convergence-bound diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import STREAM_AUDIT, substream
from .learner import Dataset, TrainConfig, local_train, n_params, predict_proba

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def auc(self) -> float:
        return float(_trapezoid(self.tpr, self.fpr))

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_from_scores(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """ROC for "positive iff score >= threshold" over every distinct score."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both members and non-members")
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    tp = np.cumsum(l)
    fp = np.cumsum(~l)
    # keep the last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    return RocCurve(fpr, tpr)


def confidence_scores(w: np.ndarray, data: Dataset) -> np.ndarray:
    return predict_proba(w, data.X, data.num_classes).max(axis=1)


def attack_features(w: np.ndarray, data: Dataset) -> np.ndarray:
    """Per-sample (max confidence, cross-entropy loss, prediction entropy)."""
    p = predict_proba(w, data.X, data.num_classes)
    p_true = np.clip(p[np.arange(len(data)), data.y], 1e-300, 1.0)
    pc = np.clip(p, 1e-300, 1.0)
    entropy = -(p * np.log(pc)).sum(axis=1)
    return np.column_stack([p.max(axis=1), -np.log(p_true), entropy])


def mia_threshold(w: np.ndarray, members: Dataset, non_members: Dataset) -> RocCurve:
    """Threshold attack on the model's top softmax confidence."""
    scores = np.r_[confidence_scores(w, members), confidence_scores(w, non_members)]
    labels = np.r_[np.ones(len(members), bool), np.zeros(len(non_members), bool)]
    return roc_from_scores(scores, labels)


def mia_logistic(
    w: np.ndarray,
    members: Dataset,
    non_members: Dataset,
    split: float = 0.5,
    seed: int = 0,
    epochs: int = 200,
) -> RocCurve:
    """Logistic-regression attacker on ``attack_features``.

    The attacker trains on a ``split`` fraction of each pool and is scored
    on the rest. The classifier is the package's own softmax learner with
    two classes, trained on standardized features.
    """
    F = np.r_[attack_features(w, members), attack_features(w, non_members)]
    lab = np.r_[np.ones(len(members), np.int64), np.zeros(len(non_members), np.int64)]
    rng = substream(seed, STREAM_AUDIT)
    tr = np.zeros(len(lab), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(lab == cls)
        k = int(round(split * len(idx)))
        if k < 1 or k >= len(idx):
            raise ValueError("degenerate attacker split")
        tr[rng.choice(idx, size=k, replace=False)] = True
    mu, sd = F[tr].mean(axis=0), F[tr].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (F - mu) / sd
    train = Dataset(Z[tr], lab[tr], 2)
    cfg = TrainConfig(batch_size=len(train), eta=0.5, epochs=epochs, l2_reg=1e-4)
    v, _ = local_train(np.zeros(n_params(3, 2)), train, cfg, rng)
    ev = ~tr
    score = predict_proba(v, Z[ev], 2)[:, 1]
    return roc_from_scores(score, lab[ev].astype(bool))


def convergence_bound(
    r0: float,
    lambda_bar: float,
    sigmas: Sequence[float],
    n_benign: int,
    d: int,
    T: int,
    mu: float,
    G: float,
) -> float:
    """``e^-1 r0 + 2 lambda_bar sqrt(r0)/mu + (G^2 + d/|N_b|^2 sum sigma^2)/(mu^2 T)``."""
    if not mu > 0 or T < 1:
        raise ValueError("need mu > 0 and T >= 1")
    noise = d / n_benign**2 * float(np.sum(np.square(sigmas)))
    return math.exp(-1.0) * r0 + 2.0 * lambda_bar * math.sqrt(r0) / mu + (G**2 + noise) / (mu**2 * T)

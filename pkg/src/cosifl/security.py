"""Alarm trigger, alarm/silence cross-analysis and the penalty ledger."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

BENIGN = "benign"
MALICIOUS = "malicious"
FALSE_ALARM = "false_alarm"

# penalty points are kept as integers scaled by this factor so that
# fractional false-alarm weights stay exact
PENALTY_SCALE = 1000


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class AlarmDecision:
    A: int
    global_acc: float
    local_acc: float

    @property
    def init_from(self) -> str:
        return "cached-local" if self.A == 1 else "global"

    @property
    def reported_acc(self) -> float:
        """Accuracy of the model the client starts training from."""
        return self.local_acc if self.A == 1 else self.global_acc


def client_alarm(global_acc: float, cached_local_acc: float, C_c: float) -> AlarmDecision:
    """Alarm iff the global model trails the cached local model by more than ``C_c``."""
    A = 1 if global_acc < cached_local_acc * (1.0 - C_c) else 0
    return AlarmDecision(A, float(global_acc), float(cached_local_acc))


@dataclass(frozen=True)
class DetectOutcome:
    case: str  # "1" | "2a" | "2b" | "3"
    S_a: tuple[int, ...]
    S_s: tuple[int, ...]
    S_b: tuple[int, ...]
    base_model: str  # "current" (w_t) | "previous" (w_{t-1})
    new_global: np.ndarray
    weights: dict[int, float]
    verdicts: dict[int, str]

    def to_json(self) -> dict:
        return {
            "case": self.case,
            "S_a": list(self.S_a),
            "S_s": list(self.S_s),
            "S_b": list(self.S_b),
            "base_model": self.base_model,
            "weights": {str(k): v for k, v in sorted(self.weights.items())},
            "verdicts": {str(k): v for k, v in sorted(self.verdicts.items())},
        }


def batch_weights(ids: Sequence[int], batch_sizes: Mapping[int, float]) -> dict[int, float]:
    """Aggregation weights proportional to batch size over ``ids``."""
    total = float(sum(batch_sizes[k] for k in ids))
    if total <= 0:
        return {k: 1.0 / len(ids) for k in ids}
    return {k: batch_sizes[k] / total for k in ids}


def weighted_sum(ids: Sequence[int], weights: Mapping[int, float], vectors: Mapping[int, np.ndarray]) -> np.ndarray:
    """``sum_k weights[k] * vectors[k]`` reduced in sorted-id order."""
    ids = sorted(ids)
    acc = np.zeros_like(vectors[ids[0]], dtype=float)
    for k in ids:
        acc = acc + weights[k] * vectors[k]
    return acc


def classify(alarms: Mapping[int, int], accs: Mapping[int, float], C_s: float):
    """Case label and ``(S_a, S_s, S_b)`` for one round of reports."""
    ids = sorted(alarms)
    S_a = tuple(k for k in ids if alarms[k] == 1)
    S_s = tuple(k for k in ids if alarms[k] != 1)
    if not S_a:
        return "1", S_a, S_s, tuple(ids)
    bar = max(accs[k] for k in S_a) * (1.0 - C_s)
    if all(bar < accs[k] for k in S_a):
        max_s = max((accs[k] for k in S_s), default=-np.inf)
        if bar <= max_s:
            return "2a", S_a, S_s, S_s
        return "2b", S_a, S_s, S_a
    return "3", S_a, S_s, tuple(k for k in S_a if accs[k] > bar)


def server_detect(
    w_prev: np.ndarray,
    w_cur: np.ndarray,
    alarms: Mapping[int, int],
    local_accs: Mapping[int, float],
    updates: Mapping[int, np.ndarray],
    batch_sizes: Mapping[int, float],
    C_s: float,
    eta_global: float = 1.0,
) -> DetectOutcome:
    """Alarm/silence cross-analysis and aggregation of the trusted updates.

    Each upload ``updates[k]`` is relative to ``w_cur``. When the analysis
    reverts to ``w_prev`` the uploads are re-expressed relative to it, so the
    new model is ``base + eta_global * sum_k eta_k (w_cur + delta_k - base)``
    with batch-proportional ``eta_k`` over the benign set.
    """
    ids = set(alarms)
    if ids != set(local_accs) or ids != set(updates) or ids != set(batch_sizes):
        raise ProtocolError("alarms, accuracies, updates and batch sizes must cover the same clients")
    if not ids:
        raise ProtocolError("no reports")
    case, S_a, S_s, S_b = classify(alarms, local_accs, C_s)
    verdicts: dict[int, str] = {}
    if case == "1":
        verdicts = {k: BENIGN for k in S_b}
    elif case == "2a":
        verdicts.update({k: BENIGN for k in S_s})
        verdicts.update({k: FALSE_ALARM for k in S_a})
    elif case == "2b":
        verdicts.update({k: BENIGN for k in S_a})
        verdicts.update({k: MALICIOUS for k in S_s})
    else:
        verdicts.update({k: (BENIGN if k in S_b else MALICIOUS) for k in S_a})

    base_name = "current" if case in ("1", "2a") else "previous"
    if not S_b:
        return DetectOutcome(case, S_a, S_s, S_b, base_name, w_cur.copy(), {}, verdicts)
    weights = batch_weights(S_b, batch_sizes)
    if base_name == "current":
        step = weighted_sum(S_b, weights, updates)
        new = w_cur + eta_global * step
    else:
        shift = w_cur - w_prev
        rebased = {k: updates[k] + shift for k in S_b}
        new = w_prev + eta_global * weighted_sum(S_b, weights, rebased)
    return DetectOutcome(case, S_a, S_s, S_b, base_name, new, weights, verdicts)


@dataclass
class PenaltyLedger:
    """Per-client penalty points (scaled integers) and the resulting ban list."""

    C_p: int
    false_alarm_weight: float = 0.5
    points: dict[int, int] = field(default_factory=dict)

    def count(self, k: int) -> float:
        return self.points.get(k, 0) / PENALTY_SCALE

    def is_banned(self, k: int) -> bool:
        return self.points.get(k, 0) >= self.C_p * PENALTY_SCALE

    @property
    def banned(self) -> frozenset[int]:
        return frozenset(k for k in self.points if self.is_banned(k))

    def copy(self) -> "PenaltyLedger":
        return PenaltyLedger(self.C_p, self.false_alarm_weight, dict(self.points))


def apply_penalties(ledger: PenaltyLedger, verdicts: Mapping[int, str]) -> PenaltyLedger:
    """New ledger after one round of verdicts.

    Malicious adds a full point and a false alarm adds ``false_alarm_weight``
    of one. A currently banned client judged benign loses one point.
    """
    out = ledger.copy()
    fa = int(round(ledger.false_alarm_weight * PENALTY_SCALE))
    for k in sorted(verdicts):
        v = verdicts[k]
        cur = out.points.get(k, 0)
        if v == MALICIOUS:
            out.points[k] = cur + PENALTY_SCALE
        elif v == FALSE_ALARM:
            out.points[k] = cur + fa
        elif v == BENIGN and ledger.is_banned(k):
            out.points[k] = max(0, cur - PENALTY_SCALE)
    return out


def rejoin_candidates(banned: Sequence[int], p_rejoin: float, rng: np.random.Generator) -> list[int]:
    """Banned clients re-admitted this round, each independently with ``p_rejoin``."""
    ids = sorted(banned)
    draws = rng.random(len(ids))
    return [k for k, u in zip(ids, draws) if u < p_rejoin]


def baseline_aggregate(
    kind: str,
    updates: Sequence[np.ndarray],
    weights: Sequence[float] | None = None,
    f_est: int = 0,
) -> np.ndarray:
    """Reference aggregators: ``fedavg``, ``coord-median`` and ``krum-score``."""
    if len(updates) == 0:
        raise ValueError("need at least one update")
    U = np.stack([np.asarray(u, dtype=float) for u in updates])
    n = len(U)
    if kind == "fedavg":
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
        return w @ U
    if kind == "coord-median":
        return np.median(U, axis=0)
    if kind == "krum-score":
        if n < 2 * f_est + 3:
            raise ValueError(f"krum needs n >= 2f+3 (n={n}, f={f_est})")
        return U[krum_index(U, f_est)]
    raise ValueError(f"unknown aggregator {kind!r}")


def krum_scores(U: np.ndarray, f_est: int) -> np.ndarray:
    """Sum of squared distances to the ``n - f - 2`` nearest other updates."""
    n = len(U)
    sq = np.sum((U[:, None, :] - U[None, :, :]) ** 2, axis=-1)
    m = n - f_est - 2
    scores = np.empty(n)
    for i in range(n):
        d = np.sort(np.delete(sq[i], i))
        scores[i] = d[:m].sum()
    return scores


def krum_index(U: np.ndarray, f_est: int) -> int:
    return int(np.argmin(krum_scores(U, f_est)))

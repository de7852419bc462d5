"""Client-side contest: Tullock utilities, best responses and the Nash equilibrium.

Client ``k`` contributes ``B_k`` samples, each worth ``e_k = alpha_k*gamma_k``
in the contest, and receives the share ``e_k B_k / sum_j e_j B_j`` of the
reward ``R`` at cost ``s_k B_k``.

Working in effective units ``q_k = e_k B_k`` turns this into the classic
asymmetric contest with linear cost ``c_k q_k``, ``c_k = s_k / e_k``, whose
equilibrium has a closed form over the set of active (cheapest) players.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import ClientAttributes


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class EquilibriumResult:
    """Equilibrium of one contest.

    ``Y`` is the quality-weighted conversion rate ``sum_k e_k B_k* / R``;
    ``B_total`` is the raw batch total.
    """

    ids: tuple[int, ...]
    B_star: np.ndarray
    q_star: np.ndarray
    R: float
    utilities: np.ndarray

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(i for i, b in zip(self.ids, self.B_star) if b > 0)

    @property
    def B_total(self) -> float:
        return float(self.B_star.sum())

    @property
    def Y(self) -> float:
        # exact summation so the same active set gives the same Y in any pool
        return math.fsum(self.q_star) / self.R

    def batch(self, client_id: int) -> float:
        return float(self.B_star[self.ids.index(client_id)])


def _arrays(attrs: Sequence[ClientAttributes]):
    e = np.array([a.effectiveness for a in attrs], dtype=float)
    s = np.array([a.s for a in attrs], dtype=float)
    return e, s


def utility(k: int, B: np.ndarray, R: float, attrs: Sequence[ClientAttributes]) -> float:
    """Utility of the client at position ``k`` for batch profile ``B``."""
    e, s = _arrays(attrs)
    B = np.asarray(B, dtype=float)
    if B[k] == 0:
        return 0.0
    total = float(e @ B)
    share = e[k] * B[k] / total if total > 0 else 0.0
    return share * R - s[k] * B[k]


def best_response_value(
    e_k: float, s_k: float, Q_others: float, R: float, B_min: float = 1.0
) -> float:
    """Utility-maximizing batch size against others' effective total ``Q_others``.

    Interior optimum ``(sqrt(e_k Q R / s_k) - Q) / e_k``, clamped at 0. With
    nobody else contributing any positive amount wins the whole reward, so
    the smallest allowed batch ``B_min`` is returned.
    """
    if not R > 0:
        raise GameError("R must be > 0")
    if e_k <= 0:
        return 0.0
    if Q_others <= 0:
        return float(B_min)
    b = (math.sqrt(e_k * Q_others * R / s_k) - Q_others) / e_k
    return b if b > 0 else 0.0


def best_response(
    k: int, B: np.ndarray, R: float, attrs: Sequence[ClientAttributes], B_min: float = 1.0
) -> float:
    e, s = _arrays(attrs)
    B = np.asarray(B, dtype=float)
    Q_others = float(e @ B - e[k] * B[k])
    return best_response_value(e[k], s[k], Q_others, R, B_min)


def nash_equilibrium(attrs: Sequence[ClientAttributes], R: float) -> EquilibriumResult:
    """Closed-form equilibrium of the asymmetric contest.

    Players are sorted by cost per effective unit ``c_k``. For each prefix
    ``M`` of size >= 2 the candidate total is ``Q = (|M|-1) R / sum_M c``;
    the equilibrium prefix is the one whose members all satisfy
    ``c_k Q < R`` while the first excluded player has ``c_k Q >= R``.
    Then ``q_k = Q (1 - c_k Q / R)`` and ``B_k = q_k / e_k``.
    """
    n = len(attrs)
    if n < 2:
        raise GameError("a contest needs at least 2 clients")
    if not R > 0:
        raise GameError("R must be > 0")
    e, s = _arrays(attrs)
    with np.errstate(divide="ignore"):
        c = np.where(e > 0, s / np.where(e > 0, e, 1.0), np.inf)
    order = np.argsort(c, kind="stable")
    cs = c[order]
    if not np.isfinite(cs[1]):
        raise GameError("fewer than 2 clients have positive effectiveness")
    Q = 0.0
    m = 2
    for m in range(2, n + 1):
        if not np.isfinite(cs[m - 1]):
            m -= 1
            break
        Q = (m - 1) * R / cs[:m].sum()
        if m == n or cs[m] * Q >= R:
            break
    Q = (m - 1) * R / cs[:m].sum()
    q = np.zeros(n)
    q[order[:m]] = np.maximum(Q * (1.0 - cs[:m] * Q / R), 0.0)
    B = np.zeros(n)
    pos = q > 0
    B[pos] = q[pos] / e[pos]
    U = np.zeros(n)
    total = math.fsum(q)
    U[pos] = q[pos] / total * R - s[pos] * B[pos]
    return EquilibriumResult(tuple(a.id for a in attrs), B, q, float(R), U)


def iterated_best_response(
    attrs: Sequence[ClientAttributes],
    R: float,
    B0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    damping: float = 0.5,
) -> np.ndarray:
    """Damped simultaneous best-response dynamics; an independent check on
    :func:`nash_equilibrium`.

    Iterates in effective units with relative-change stopping. Returns the
    batch profile.
    """
    e, s = _arrays(attrs)
    n = len(attrs)
    q = np.full(n, R / n * 0.1) if B0 is None else np.asarray(B0, float) * e
    for _ in range(max_iter):
        total = math.fsum(q)
        target = np.zeros(n)
        for k in range(n):
            if e[k] <= 0:
                continue
            Qo = total - q[k]
            if Qo <= 0:
                target[k] = R / 4.0
                continue
            # best response in effective units: sqrt(Qo R / c) - Qo
            target[k] = max(math.sqrt(Qo * R * e[k] / s[k]) - Qo, 0.0)
        new = damping * q + (1 - damping) * target
        if np.max(np.abs(new - q)) <= tol * max(1.0, R):
            q = new
            break
        q = new
    B = np.zeros(n)
    B[e > 0] = q[e > 0] / e[e > 0]
    return B


def conversion_rate(eq: EquilibriumResult, R: float | None = None) -> float:
    """Quality-weighted equilibrium contribution per unit of reward."""
    R = eq.R if R is None else R
    return float(eq.q_star.sum()) / R


def reward_shares(eq: EquilibriumResult) -> np.ndarray:
    """Fraction of ``R`` paid to each player; sums to 1 over the active set."""
    total = eq.q_star.sum()
    return eq.q_star / total if total > 0 else np.zeros_like(eq.q_star)


def integer_batches(eq: EquilibriumResult, B_min: int = 1, caps: Sequence[int] | None = None) -> dict[int, int]:
    """Round active players' batches to integers >= ``B_min`` (and <= cap)."""
    out = {}
    for j, (cid, b) in enumerate(zip(eq.ids, eq.B_star)):
        if b <= 0:
            continue
        v = max(int(B_min), int(round(b)))
        if caps is not None:
            v = min(v, int(caps[j]))
        out[cid] = v
    return out

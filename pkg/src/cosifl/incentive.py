"""Server-side planning: loss proxy, server cost, (T, R) optimization and
Pareto client selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import ClientAttributes, ScenarioConfig
from .game import EquilibriumResult, GameError, nash_equilibrium

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
CONVEXITY_GRID = 50
CONVEXITY_TOL = 1e-6


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostBreakdown:
    L_proxy: float
    R: float
    risk_penalty: float

    @property
    def total(self) -> float:
        return self.L_proxy + self.R + self.risk_penalty


@dataclass(frozen=True)
class RewardResult:
    R: float
    cost: float
    method: str  # "golden" | "grid"
    nonconvex: bool = False


@dataclass(frozen=True)
class ParetoRecord:
    chosen: tuple[int, ...]
    eq_set: tuple[int, ...]
    Y: float
    t_max: float
    T: int
    R: float
    cost: float
    nonconvex: bool = False

    @property
    def feasible(self) -> bool:
        return self.T >= 1 and math.isfinite(self.cost)


def _theta(cfg: ScenarioConfig) -> float:
    if cfg.cost.Theta is None:
        raise PlanningError("cost.Theta is unresolved; estimate it from data or set it in the scenario")
    return cfg.cost.Theta


def noniid_influence(alphas: np.ndarray, B: np.ndarray) -> float:
    """Batch-weighted mean of ``1 - alpha_k``; 0 for IID clients, within [0, 1]."""
    total = B.sum()
    if total <= 0:
        return 0.0
    return float(np.sum(B / total * (1.0 - alphas)))


def loss_proxy(attrs: Sequence[ClientAttributes], B: np.ndarray, T: int, cfg: ScenarioConfig) -> float:
    """Model-loss proxy after ``T`` rounds.

    ``gamma1 phi^T Theta + (1 - phi^T)(gamma2 sum_k T^2/(B_k eps_k)^2 + gamma3 kappa)``,
    summed over clients with ``B_k > 0``.
    """
    if T < 1:
        raise PlanningError("T must be >= 1")
    c = cfg.cost
    B = np.asarray(B, dtype=float)
    mask = B > 0
    eps = np.array([a.epsilon for a in attrs])[mask]
    alphas = np.array([a.alpha for a in attrs], dtype=float)[mask]
    Bm = B[mask]
    decay = cfg.phi**T
    privacy = float(np.sum(T**2 / (Bm**2 * eps**2)))
    kappa = noniid_influence(alphas, Bm)
    return c.gamma1 * decay * _theta(cfg) + (1.0 - decay) * (c.gamma2 * privacy + c.gamma3 * kappa)


def risk_penalty(cfg: ScenarioConfig, malicious_count: float = 0.0, false_alarm_rate: float = 0.0) -> float:
    return cfg.cost.delta1 * malicious_count + cfg.cost.delta2 * false_alarm_rate


def server_cost(
    attrs: Sequence[ClientAttributes],
    T: int,
    R: float,
    cfg: ScenarioConfig,
    risk_estimate: tuple[float, float] = (0.0, 0.0),
) -> CostBreakdown:
    """Server cost of running ``attrs`` for ``T`` rounds with reward ``R``."""
    eq = nash_equilibrium(attrs, R)
    return CostBreakdown(loss_proxy(attrs, eq.B_star, T, cfg), R, risk_penalty(cfg, *risk_estimate))


class CostCurve:
    """``R -> C_server`` for a fixed client set and ``T``.

    Equilibrium batches scale linearly in ``R``, so the contest is solved
    once at ``R = 1`` and rescaled.
    """

    def __init__(self, attrs: Sequence[ClientAttributes], T: int, cfg: ScenarioConfig,
                 risk_estimate: tuple[float, float] = (0.0, 0.0)):
        self.attrs = list(attrs)
        self.T = T
        self.cfg = cfg
        self.eq1 = nash_equilibrium(self.attrs, 1.0)
        self.risk = risk_penalty(cfg, *risk_estimate)

    def __call__(self, R: float) -> float:
        return loss_proxy(self.attrs, self.eq1.B_star * R, self.T, self.cfg) + R + self.risk


def golden_section(f: Callable[[float], float], lo: float, hi: float, rtol: float = 1e-10) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > rtol * max(1.0, abs(a) + abs(b)):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    cands = [(f1, x1), (f2, x2), (f(lo), lo), (f(hi), hi)]
    fx, x = min(cands)
    return x, fx


def is_convex_on_grid(f: Callable[[float], float], lo: float, hi: float, n: int = CONVEXITY_GRID,
                      tol: float = CONVEXITY_TOL) -> bool:
    """Second differences of ``f`` on an ``n``-point grid are all >= ``-tol``."""
    xs = np.linspace(lo, hi, n)
    ys = np.array([f(x) for x in xs])
    scale = max(1.0, float(np.max(np.abs(ys))))
    return bool(np.all(np.diff(ys, 2) >= -tol * scale))


def grid_argmin(f: Callable[[float], float], lo: float, hi: float, n: int = 1000) -> tuple[float, float]:
    xs = np.linspace(lo, hi, n)
    ys = np.array([f(x) for x in xs])
    i = int(np.argmin(ys))
    return float(xs[i]), float(ys[i])


def optimal_reward(
    attrs: Sequence[ClientAttributes],
    T: int,
    cfg: ScenarioConfig,
    risk_estimate: tuple[float, float] = (0.0, 0.0),
    check_convexity: bool = True,
) -> RewardResult:
    """Cost-minimizing reward on ``[R_lo, R_hi]`` for fixed clients and ``T``.

    Uses golden-section search; if the profile fails the second-difference
    convexity test the search falls back to a 1000-point scan and the result
    is flagged.
    """
    curve = CostCurve(attrs, T, cfg, risk_estimate)
    lo, hi = cfg.cost.R_lo, cfg.cost.R_hi
    if check_convexity and not is_convex_on_grid(curve, lo, hi):
        R, c = grid_argmin(curve, lo, hi)
        return RewardResult(R, c, "grid", nonconvex=True)
    R, c = golden_section(curve, lo, hi)
    return RewardResult(R, c, "golden")


def max_feasible_T(t_max: float, cfg: ScenarioConfig) -> int:
    return min(int(math.floor(cfg.D_total / t_max + 1e-12)), cfg.t_max_rounds)


def optimal_T(
    attrs: Sequence[ClientAttributes],
    cfg: ScenarioConfig,
    T_range: Sequence[int] | None = None,
) -> tuple[int, RewardResult]:
    """Scan integer ``T`` over ``1..floor(D_total / t_max)``; best ``(T*, R*)``.

    ``t_max`` is the largest latency in the equilibrium set of ``attrs``
    (which does not depend on ``R``).
    """
    eq = nash_equilibrium(attrs, 1.0)
    active = [a for a, b in zip(attrs, eq.B_star) if b > 0]
    t_max = max(a.t_latency for a in active)
    if T_range is None:
        T_hi = max_feasible_T(t_max, cfg)
        if T_hi < 1:
            raise PlanningError(f"t_max = {t_max:g} exceeds D_total = {cfg.D_total:g}; set infeasible")
        T_range = range(1, T_hi + 1)
    best: tuple[int, RewardResult] | None = None
    for T in T_range:
        rr = optimal_reward(attrs, T, cfg)
        if best is None or rr.cost < best[1].cost:
            best = (T, rr)
    assert best is not None
    return best


def _equilibrium_summary(attrs: Sequence[ClientAttributes]) -> tuple[EquilibriumResult, tuple[int, ...], float]:
    eq = nash_equilibrium(attrs, 1.0)
    eq_set = eq.active_set
    by_id = {a.id: a for a in attrs}
    t_max = max(by_id[i].t_latency for i in eq_set)
    return eq, eq_set, t_max


def pareto_records(candidates: Sequence[ClientAttributes]) -> list[tuple[tuple[int, ...], tuple[int, ...], float, float]]:
    """Latency-relaxation loop producing ``(pool, eq_set, Y, t_max)`` tuples.

    Starting from the full pool, solve the contest, record the equilibrium
    set and its largest latency ``t_max``, then shrink the pool to clients
    strictly faster than ``t_max`` and repeat while at least two remain.
    """
    pool = sorted(candidates, key=lambda a: a.id)
    out = []
    while len(pool) >= 2:
        try:
            eq, eq_set, t_max = _equilibrium_summary(pool)
        except GameError:
            break
        out.append((tuple(a.id for a in pool), eq_set, eq.Y, t_max))
        pool = [a for a in pool if a.t_latency < t_max]
    return out


def pareto_select(
    candidates: Sequence[ClientAttributes], cfg: ScenarioConfig
) -> tuple[list[ParetoRecord], ParetoRecord]:
    """Pareto selections and the one with the lowest optimized server cost."""
    if len(candidates) < 2:
        raise PlanningError("need at least 2 candidates")
    by_id = {a.id: a for a in candidates}
    H: list[ParetoRecord] = []
    for pool, eq_set, Y, t_max in pareto_records(candidates):
        attrs = [by_id[i] for i in eq_set]
        try:
            T, rr = optimal_T(attrs, cfg)
            H.append(ParetoRecord(pool, eq_set, Y, t_max, T, rr.R, rr.cost, rr.nonconvex))
        except PlanningError:
            H.append(ParetoRecord(pool, eq_set, Y, t_max, 0, float("nan"), float("inf")))
    feasible = [r for r in H if r.feasible]
    if not feasible:
        raise PlanningError("every Pareto selection is infeasible under D_total")
    best = min(feasible, key=lambda r: r.cost)
    return H, best


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """``(Y, t_max)`` pair ``a`` Pareto-dominates ``b``."""
    return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])

"""End-to-end simulation: planning, the round loop, baselines and outputs."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import attacks
from .audit import convergence_bound, mia_logistic, mia_threshold
from .data import (
    ClientShards,
    default_probes,
    estimate_lambda,
    generate_global,
    partition_noniid,
    split_holdout,
)
from .domain import (
    STREAM_REJOIN,
    STREAM_TRAIN,
    ClientAttributes,
    ScenarioConfig,
    ScenarioError,
    derive_alpha,
    substream,
)
from .game import GameError, integer_batches, nash_equilibrium, reward_shares
from .incentive import (
    PlanningError,
    ParetoRecord,
    loss_proxy,
    max_feasible_T,
    optimal_reward,
    pareto_select,
    risk_penalty,
)
from .learner import (
    Dataset,
    TrainConfig,
    accuracy,
    fit_full_batch,
    init_params,
    local_train,
    loss_and_grad,
    noise_scale,
    predict_proba,
)
from .security import (
    FALSE_ALARM,
    MALICIOUS,
    AlarmDecision,
    PenaltyLedger,
    apply_penalties,
    batch_weights,
    client_alarm,
    rejoin_candidates,
    server_detect,
    weighted_sum,
)

RULES = ("cosifl", "nd", "ndt")
DEFENSES = ("cosifl", "fedavg")
METRIC_COLUMNS = ("round", "MA", "MR", "confidence", "cost")


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class Environment:
    """Data and resolved attributes shared by every run of one scenario."""

    cfg: ScenarioConfig
    shards: ClientShards
    server_test: Dataset
    lambdas: np.ndarray
    lambda_max: float
    w_star: np.ndarray


def prepare(cfg: ScenarioConfig) -> Environment:
    """Generate data, partition it, and resolve ``alpha_k`` and ``Theta``."""
    d = cfg.data
    n_total = int(math.ceil(cfg.K * d.samples_per_client / (1.0 - d.server_fraction)))
    ds = generate_global(d, n_total, cfg.seed)
    pool, server_test, _ = split_holdout(ds, d.server_fraction, cfg.seed)
    shards = partition_noniid(pool, cfg.K, d.p_noniid, cfg.seed, d.test_fraction, d.min_shard)
    lam = estimate_lambda(shards, default_probes(d.feature_dim, d.num_classes, cfg.seed))
    given = [c.lam for c in cfg.clients if c.lam is not None]
    lam_all = np.array([c.lam if c.lam is not None else lam[c.id] for c in cfg.clients])
    lam_max = cfg.lambda_max if cfg.lambda_max is not None else float(max(lam_all.max(), *given, 0.0))
    clients = []
    for c in cfg.clients:
        if c.alpha is None:
            lk = float(lam_all[c.id])
            try:
                alpha = derive_alpha(lk, lam_max) if lam_max > 0 else 1.0
                source = "estimated" if c.lam is None else "config"
            except ScenarioError:
                alpha, source = 0.0, "rejected"
            c = dataclasses.replace(c, alpha=alpha, lam=lk, alpha_source=source)
        clients.append(c)
    pooled = shards.pooled_train()
    w_star = fit_full_batch(pooled, cfg.training.l2_reg)
    new_cost = cfg.cost
    if new_cost.Theta is None:
        f0, _ = loss_and_grad(np.zeros_like(w_star), pooled, cfg.training.l2_reg)
        fs, _ = loss_and_grad(w_star, pooled, cfg.training.l2_reg)
        new_cost = dataclasses.replace(new_cost, Theta=float(f0 - fs))
    cfg = dataclasses.replace(cfg, clients=tuple(clients), cost=new_cost)
    return Environment(cfg, shards, server_test, lam, lam_max, w_star)


# ----------------------------------------------------------------------------
# planning


@dataclass(frozen=True)
class Plan:
    rule: str
    invited: tuple[int, ...]
    T: int
    R: float
    planned_cost: float
    records: tuple[ParetoRecord, ...] = ()


def planning_attributes(attrs: tuple[ClientAttributes, ...], rule: str):
    """Attributes as the planner sees them; ND and NDT treat every client as full quality."""
    if rule == "cosifl":
        return attrs
    return tuple(dataclasses.replace(a, alpha=1.0, nu=1.0) for a in attrs)


def make_plan(cfg: ScenarioConfig, rule: str = "cosifl") -> Plan:
    """Choose ``(N, T, R)`` under a discrimination rule. Needs resolved alphas and Theta."""
    if rule not in RULES:
        raise EngineError(f"unknown rule {rule!r}")
    view = planning_attributes(cfg.clients, rule)
    if rule == "ndt":
        T = cfg.T_fixed if cfg.T_fixed is not None else cfg.t_max_rounds
        rr = optimal_reward(view, T, cfg)
        return Plan(rule, tuple(a.id for a in view), T, rr.R, rr.cost)
    H, best = pareto_select(view, cfg)
    return Plan(rule, best.chosen, best.T, best.R, best.cost, tuple(H))


@dataclass(frozen=True)
class PlanEvaluation:
    eq_set: tuple[int, ...]
    t_max: float
    T: int
    cost: float
    B_star: dict[int, float]


def evaluate_plan(cfg: ScenarioConfig, plan: Plan) -> PlanEvaluation:
    """True server cost of a plan once clients respond with their real attributes.

    Rules that respect the time budget have ``T`` truncated to what the
    realized equilibrium set can finish within ``D_total``.
    """
    by_id = {a.id: a for a in cfg.clients}
    attrs = [by_id[i] for i in plan.invited]
    try:
        eq = nash_equilibrium(attrs, plan.R)
    except GameError as exc:
        raise PlanningError(f"invited pool {plan.invited} has no realized equilibrium: {exc}") from exc
    active = [a for a, b in zip(attrs, eq.B_star) if b > 0]
    t_max = max(a.t_latency for a in active)
    T = plan.T
    if plan.rule != "ndt":
        T = min(T, max_feasible_T(t_max, cfg))
        if T < 1:
            raise PlanningError("realized equilibrium set cannot finish one round within D_total")
    cost = loss_proxy(attrs, eq.B_star, T, cfg) + plan.R + risk_penalty(cfg)
    return PlanEvaluation(
        eq.active_set, t_max, T, cost, {i: float(b) for i, b in zip(eq.ids, eq.B_star) if b > 0}
    )


def rule_cost(cfg: ScenarioConfig, rule: str) -> float:
    """Realized server cost of the plan ``rule`` makes. Needs resolved alphas and Theta."""
    return evaluate_plan(cfg, make_plan(cfg, rule)).cost


# ----------------------------------------------------------------------------
# the round loop


@dataclass
class RunResult:
    summary: dict[str, Any]
    rounds: list[dict[str, Any]]
    final_model: np.ndarray
    metrics: list[dict[str, Any]] = field(default_factory=list)


def _targeted_metrics(w: np.ndarray, test: Dataset, cfg: ScenarioConfig):
    if cfg.attack.kind != "targeted":
        return None, None
    src = test.subset(np.flatnonzero(test.y == cfg.attack.source))
    if len(src) == 0:
        return None, None
    mr = 1.0 - accuracy(w, src)
    conf = misclassification_confidence(w, src, cfg.attack.target)
    return mr, conf


def misclassification_confidence(w: np.ndarray, targeted_samples: Dataset, target_class: int) -> float:
    """Mean probability assigned to ``target_class`` over ``targeted_samples``."""
    if len(targeted_samples) == 0:
        raise ValueError("no targeted samples")
    p = predict_proba(w, targeted_samples.X, targeted_samples.num_classes)
    return float(p[:, target_class].mean())


def run(
    cfg: ScenarioConfig,
    rule: str = "cosifl",
    defense: str = "cosifl",
    defense_start_round: int = 1,
    env: Environment | None = None,
    rounds_override: int | None = None,
) -> RunResult:
    """Plan, then execute the federated rounds.

    ``defense="fedavg"`` disables client alarms and server detection
    entirely. With ``defense="cosifl"`` both switch on from round
    ``defense_start_round``; earlier rounds aggregate every update.
    """
    if defense not in DEFENSES:
        raise EngineError(f"unknown defense {defense!r}")
    if env is None or env.cfg.seed != cfg.seed:
        env = prepare(cfg)
    # keep run-specific settings from cfg, data-derived values from env
    cfg = dataclasses.replace(cfg, clients=env.cfg.clients, cost=dataclasses.replace(cfg.cost, Theta=env.cfg.cost.Theta))
    plan = make_plan(cfg, rule)
    ev = evaluate_plan(cfg, plan)
    T = ev.T if rounds_override is None else int(rounds_override)
    if T < 1:
        raise EngineError("plan has no feasible rounds")
    if defense_start_round < 1 or (defense_start_round > 1 and defense_start_round >= T):
        raise EngineError(f"defense_start_round must be 1 or lie in [2, T) with T = {T}")

    by_id = {a.id: a for a in cfg.clients}
    invited = list(plan.invited)
    malicious = set(cfg.malicious_ids())
    shards, test = env.shards, env.server_test
    C = cfg.data.num_classes
    dim = cfg.data.feature_dim
    tr, sec, pv = cfg.training, cfg.security, cfg.privacy
    caps = {k: len(shards.train_idx[k]) for k in invited}
    train_sets = {}
    for k in invited:
        ds = shards.train(k)
        if k in malicious:
            ds = attacks.poison_labels(cfg.attack, ds)
        train_sets[k] = ds

    w0 = init_params(dim, C).w
    w_prev, w_cur = w0.copy(), w0.copy()
    cached: dict[int, np.ndarray | None] = {k: None for k in invited}
    prev_delta: np.ndarray | None = None
    ledger = PenaltyLedger(sec.C_p, sec.false_alarm_weight)
    planned_B = ev.B_star
    planned_attrs = [by_id[i] for i in invited]
    planned_B_vec = np.array([planned_B.get(i, 0.0) for i in invited])

    rounds: list[dict[str, Any]] = []
    metrics: list[dict[str, Any]] = []
    malicious_total = 0
    alarm_events = 0
    false_alarms = 0
    alarm_benign = {k: 0 for k in invited}
    alarm_count = {k: 0 for k in invited}
    sigmas_used: dict[int, float] = {}
    banned_history = []
    far_history: list[float] = []
    max_grad = 0.0

    for t in range(1, T + 1):
        defense_on = defense == "cosifl" and t >= defense_start_round
        banned = ledger.banned if defense_on else frozenset()
        back = rejoin_candidates(
            [k for k in invited if k in banned], sec.p_rejoin, substream(cfg.seed, STREAM_REJOIN, t)
        )
        players = [k for k in invited if k not in banned or k in back]
        round_log: dict[str, Any] = {"round": t, "players": players, "rejoined": back}
        eq = None
        if len(players) >= 2:
            try:
                eq = nash_equilibrium([by_id[k] for k in players], plan.R)
            except GameError:
                eq = None
        if eq is None:
            round_log["skipped"] = True
            round_log["malicious_count"] = 0
            new = w_cur
        else:
            batches = integer_batches(eq, tr.B_min, [caps[k] for k in players])
            shares = reward_shares(eq)
            participants = sorted(batches)
            alarms: dict[int, int] = {}
            accs: dict[int, float] = {}
            updates: dict[int, np.ndarray] = {}
            clients_log = []
            for k in participants:
                tk = shards.test(k)
                g_acc = accuracy(w_cur, tk)
                if defense_on and cached[k] is not None:
                    dec = client_alarm(g_acc, accuracy(cached[k], tk), sec.C_c)
                else:
                    dec = AlarmDecision(0, g_acc, g_acc)
                if defense_on and k in malicious:
                    dec = attacks.malicious_alarm(cfg.attack.alarm_policy, dec)
                start = cached[k] if dec.A == 1 and cached[k] is not None else w_cur
                B_k = batches[k]
                sigma = 0.0
                if pv.use_ldp:
                    sigma = (
                        pv.sigma_override
                        if pv.sigma_override is not None
                        else noise_scale(tr.eta, pv.clip, ev.T, B_k, by_id[k].epsilon, pv.delta)
                    )
                    sigmas_used[k] = sigma
                tc = TrainConfig(
                    batch_size=B_k,
                    eta=tr.eta,
                    epochs=tr.local_epochs,
                    l2_reg=tr.l2_reg,
                    use_ldp=pv.use_ldp,
                    clip=pv.clip,
                    sigma=sigma,
                )
                g_k, _ = local_train(start, train_sets[k], tc, substream(cfg.seed, STREAM_TRAIN, k, t))
                cached[k] = g_k
                delta = g_k - w_cur
                if k in malicious:
                    delta = attacks.poison_update(cfg.attack, delta, prev_delta)
                alarms[k] = dec.A
                accs[k] = dec.reported_acc
                updates[k] = delta
                if dec.A == 1:
                    alarm_events += 1
                    alarm_count[k] += 1
                clients_log.append(
                    {
                        "id": k,
                        "A": dec.A,
                        "global_acc": dec.global_acc,
                        "local_acc": dec.local_acc,
                        "B": B_k,
                        "B_star": float(eq.batch(k)),
                        "reward": float(plan.R * shares[eq.ids.index(k)]),
                        "malicious": k in malicious,
                        "update_norm": float(np.linalg.norm(delta)),
                    }
                )
            round_log["clients"] = clients_log
            round_log["reward_total"] = float(sum(c["reward"] for c in clients_log))
            if defense_on:
                out = server_detect(w_prev, w_cur, alarms, accs, updates, batches, sec.C_s, tr.eta_global)
                ledger = apply_penalties(ledger, out.verdicts)
                new = out.new_global
                round_log["detect"] = out.to_json()
                n_mal = sum(1 for v in out.verdicts.values() if v == MALICIOUS)
                n_fa = sum(1 for v in out.verdicts.values() if v == FALSE_ALARM)
                malicious_total += n_mal
                false_alarms += n_fa
                for k, v in out.verdicts.items():
                    if alarms.get(k) == 1 and v != FALSE_ALARM:
                        alarm_benign[k] += 1
                round_log["malicious_count"] = n_mal
            else:
                weights = batch_weights(participants, batches)
                new = w_cur + tr.eta_global * weighted_sum(participants, weights, updates)
                round_log["detect"] = None
                round_log["malicious_count"] = 0
        prev_delta = new - w_cur
        w_prev, w_cur = w_cur, new
        far = false_alarms / alarm_events if alarm_events else 0.0
        far_history.append(far)
        ma = accuracy(w_cur, test)
        mr, conf = _targeted_metrics(w_cur, test, cfg)
        risk_t = risk_penalty(cfg, malicious_total, float(np.mean(far_history)))
        cost_t = loss_proxy(planned_attrs, planned_B_vec, t, cfg) + plan.R + risk_t
        round_log.update(
            {
                "MA": ma,
                "MR": mr,
                "confidence": conf,
                "false_alarm_rate": far,
                "banned": sorted(ledger.banned),
                "sim_time": t * ev.t_max,
            }
        )
        banned_history.append(sorted(ledger.banned))
        rounds.append(round_log)
        metrics.append({"round": t, "MA": ma, "MR": mr, "confidence": conf, "cost": cost_t})

    far = float(np.mean(far_history))
    L_final = loss_proxy(planned_attrs, planned_B_vec, T, cfg)
    total_cost = L_final + plan.R + risk_penalty(cfg, malicious_total, far)

    members = shards.members()
    mia = {
        "threshold_auc": mia_threshold(w_cur, members, test).auc,
        "logistic_auc": mia_logistic(w_cur, members, test, seed=cfg.seed).auc,
    }
    for k in invited:
        _, g = loss_and_grad(w_cur, shards.train(k), tr.l2_reg)
        max_grad = max(max_grad, float(np.linalg.norm(g)))
    G = min(max_grad, pv.clip) if pv.use_ldp else max_grad
    benign_ids = [k for k in invited if k not in malicious]
    diag: dict[str, Any] = {
        "r0": float(np.sum((w0 - env.w_star) ** 2)),
        "r_T": float(np.sum((w_cur - env.w_star) ** 2)),
        "bound": None,
    }
    if tr.l2_reg > 0 and benign_ids:
        diag["bound"] = convergence_bound(
            diag["r0"],
            float(np.mean([env.lambdas[k] for k in benign_ids])),
            [sigmas_used.get(k, 0.0) for k in benign_ids],
            len(benign_ids),
            w0.size,
            T,
            tr.l2_reg,
            G,
        )

    summary: dict[str, Any] = {
        "rule": rule,
        "defense": defense,
        "defense_start_round": defense_start_round,
        "plan": {
            "N": list(plan.invited),
            "N_star": list(ev.eq_set),
            "T": T,
            "R": plan.R,
            "t_max": ev.t_max,
            "planned_cost": plan.planned_cost,
        },
        "final_MA": metrics[-1]["MA"],
        "MA_trajectory": [m["MA"] for m in metrics],
        "final_MR": metrics[-1]["MR"],
        "final_confidence": metrics[-1]["confidence"],
        "cost": {
            "L_proxy": L_final,
            "R": plan.R,
            "malicious_count": malicious_total,
            "mean_false_alarm_rate": far,
            "risk_penalty": risk_penalty(cfg, malicious_total, far),
            "total": total_cost,
        },
        "mia": mia,
        "malicious_ids": sorted(malicious),
        "banned_history": banned_history,
        "alarm_precision": {
            str(k): (alarm_benign[k] / alarm_count[k] if alarm_count[k] else None) for k in invited
        },
        "alpha": [c.alpha for c in cfg.clients],
        "lambda": env.lambdas.tolist(),
        "lambda_max": env.lambda_max,
        "Theta": cfg.cost.Theta,
        "convergence": diag,
        "scenario": cfg.to_dict(),
    }
    return RunResult(summary, rounds, w_cur, metrics)


def run_discrimination_rule(rule: str, cfg: ScenarioConfig, env: Environment | None = None) -> RunResult:
    return run(cfg, rule=rule, env=env)


def run_self_recovery(cfg: ScenarioConfig, defense_start_round: int, env: Environment | None = None) -> RunResult:
    """Undefended rounds until ``defense_start_round``, full protocol afterwards."""
    return run(cfg, defense="cosifl", defense_start_round=defense_start_round, env=env)


# ----------------------------------------------------------------------------
# outputs


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_outputs(result: RunResult) -> dict[str, str]:
    if not result.metrics:
        raise EngineError("empty run; nothing to write")
    rounds = "".join(json.dumps(r, allow_nan=False) + "\n" for r in result.rounds)
    summary = json.dumps(result.summary, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in result.metrics:
        w.writerow([_fmt(m[c]) for c in METRIC_COLUMNS])
    model = json.dumps({"w": result.final_model.tolist()}) + "\n"
    return {"rounds.jsonl": rounds, "summary.json": summary, "metrics.csv": buf.getvalue(), "model.json": model}


def emit_outputs(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write ``rounds.jsonl``, ``summary.json``, ``metrics.csv`` and ``model.json``."""
    files = render_outputs(result)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths

"""Command-line entry point: ``cosifl run|plan|equilibrium|audit|sweep``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .audit import mia_logistic, mia_threshold
from .data import PartitionError, dump_shards
from .domain import ScenarioConfig, ScenarioError, dump_scenario, load_scenario, scenario_from_dict
from .engine import RULES, EngineError, emit_outputs, make_plan, prepare, run
from .game import GameError, nash_equilibrium
from .incentive import PlanningError


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _adapted_scenario(cfg: ScenarioConfig, precision: dict[str, float | None]) -> ScenarioConfig:
    """Copy of ``cfg`` with ``gamma_k`` replaced by realized alarm precision where observed."""
    clients = []
    for c in cfg.clients:
        p = precision.get(str(c.id))
        if p is not None:
            c = dataclasses.replace(c, gamma=min(1.0, max(p, 1e-3)))
        clients.append(c)
    return cfg.replace(clients=tuple(clients))


def cmd_run(args) -> int:
    cfg = _load(args)
    env = prepare(cfg)
    res = run(cfg, rule=args.rule, defense=args.defense, defense_start_round=args.defense_start, env=env)
    out = Path(args.out)
    emit_outputs(res, out)
    if args.dump_shards:
        dump_shards(env.shards, out / "shards")
    if args.adaptive_gamma:
        adapted = _adapted_scenario(cfg, res.summary["alarm_precision"])
        dump_scenario(adapted, out / "scenario_adapted.json")
    s = res.summary
    print(f"rounds={s['plan']['T']} R*={s['plan']['R']:.4f} final_MA={s['final_MA']:.4f} cost={s['cost']['total']:.4f}")
    return 0


def _plan_env_cfg(args) -> ScenarioConfig:
    cfg = _load(args)
    if any(c.alpha is None for c in cfg.clients) or cfg.cost.Theta is None:
        cfg = prepare(cfg).cfg
    return cfg


def cmd_plan(args) -> int:
    cfg = _plan_env_cfg(args)
    plan = make_plan(cfg, args.rule)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["pool", "eq_set", "Y", "t_max", "T", "R", "cost", "nonconvex"])
    for r in plan.records:
        w.writerow([" ".join(map(str, r.chosen)), " ".join(map(str, r.eq_set)), r.Y, r.t_max, r.T, r.R, r.cost, int(r.nonconvex)])
    chosen = {"rule": plan.rule, "N": list(plan.invited), "T": plan.T, "R": plan.R, "cost": plan.planned_cost}
    print(json.dumps(chosen))
    return 0


def cmd_equilibrium(args) -> int:
    cfg = _plan_env_cfg(args)
    R = args.reward if args.reward is not None else make_plan(cfg, "cosifl").R
    eq = nash_equilibrium(cfg.clients, R)
    by_id = {c.id: c for c in cfg.clients}
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["id", "alpha", "gamma", "s", "effectiveness", "unit_cost", "B_star", "q_star", "utility", "active"])
    for i, k in enumerate(eq.ids):
        c = by_id[k]
        e = c.effectiveness
        unit = c.s / e if e > 0 else float("inf")
        w.writerow([k, c.alpha, c.gamma, c.s, e, unit, eq.B_star[i], eq.q_star[i], eq.utilities[i], int(eq.B_star[i] > 0)])
    return 0


def cmd_audit(args) -> int:
    run_dir = Path(args.run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    w = np.array(json.loads((run_dir / "model.json").read_text())["w"])
    cfg = scenario_from_dict(summary["scenario"])
    env = prepare(cfg)
    members = env.shards.members()
    curves = {
        "threshold": mia_threshold(w, members, env.server_test),
        "logistic": mia_logistic(w, members, env.server_test, seed=cfg.seed),
    }
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "roc.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["attack", "fpr", "tpr"])
        for name, curve in curves.items():
            for f, t in curve.points():
                wr.writerow([name, repr(f), repr(t)])
    aucs = {name: curve.auc for name, curve in curves.items()}
    (out / "auc.json").write_text(json.dumps(aucs, indent=2) + "\n")
    print(json.dumps(aucs))
    return 0


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args) -> int:
    base = _load(args)
    values = [_parse_value(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        for seed in seeds:
            cfg = base.replace(**{args.param: v, "seed": seed})
            res = run(cfg, rule=args.rule, defense=args.defense)
            s = res.summary
            rows.append([args.param, json.dumps(v), seed, s["final_MA"], s["final_MR"], s["cost"]["total"],
                         s["mia"]["threshold_auc"], s["mia"]["logistic_auc"]])
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["param", "value", "seed", "final_MA", "final_MR", "cost", "threshold_auc", "logistic_auc"])
        for r in rows:
            wr.writerow(["" if x is None else x for x in r])
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cosifl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, seed=True):
        sp.add_argument("--scenario", required=True, help="scenario JSON file")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    r = sub.add_parser("run", help="plan and simulate one scenario")
    scenario_args(r)
    r.add_argument("--out", default="runs/latest")
    r.add_argument("--rule", choices=RULES, default="cosifl")
    r.add_argument("--defense", choices=("cosifl", "fedavg"), default="cosifl")
    r.add_argument("--defense-start", type=int, default=1, metavar="N")
    r.add_argument("--dump-shards", action="store_true", help="write per-client CSV shards")
    r.add_argument("--adaptive-gamma", action="store_true",
                   help="write scenario_adapted.json with gamma set to realized alarm precision")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plan", help="print Pareto records as CSV and the chosen plan as JSON")
    scenario_args(pl)
    pl.add_argument("--rule", choices=RULES, default="cosifl")
    pl.set_defaults(func=cmd_plan)

    eq = sub.add_parser("equilibrium", help="print the client equilibrium table as CSV")
    scenario_args(eq)
    eq.add_argument("--reward", type=float, default=None, help="reward R (default: planned R*)")
    eq.set_defaults(func=cmd_equilibrium)

    a = sub.add_parser("audit", help="membership-inference audit of a finished run")
    a.add_argument("run_dir")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_audit)

    sw = sub.add_parser("sweep", help="run a scenario over a grid of one parameter")
    scenario_args(sw, seed=False)
    sw.add_argument("--param", required=True, help="field name, e.g. attack__fraction")
    sw.add_argument("--values", required=True, help="comma-separated JSON values")
    sw.add_argument("--seeds", default=None, help="comma-separated seeds")
    sw.add_argument("--rule", choices=RULES, default="cosifl")
    sw.add_argument("--defense", choices=("cosifl", "fedavg"), default="cosifl")
    sw.add_argument("--out", default="runs/sweep")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, PlanningError, EngineError, GameError, PartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

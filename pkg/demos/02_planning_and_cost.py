"""
Planning a training campaign
============================

The server picks who to invite, how many rounds to run and how much reward
to offer. It walks a list of Pareto-efficient pools (more contribution
versus slower stragglers), optimizes ``R`` and ``T`` for each, and keeps the
cheapest. Two ablations ignore data quality (``nd``) or additionally invite
everyone for a fixed number of rounds (``ndt``).
"""

from pathlib import Path

from cosifl import load_scenario, make_plan, prepare
from cosifl.engine import evaluate_plan

root = Path(__file__).resolve().parents[1] / "scenarios"
cfg = prepare(load_scenario(root / "cost.json")).cfg

print("client  alpha  eps   s     t")
for c in cfg.clients:
    print(f"{c.id:>6}  {c.alpha:.2f}  {c.epsilon:4.1f}  {c.s:.2f}  {c.t_latency:4.1f}")

plan = make_plan(cfg, "cosifl")
print("\nPareto records (pool -> equilibrium set, Y, t_max, T*, R*, cost)")
for r in plan.records:
    print(f"  {r.chosen} -> {r.eq_set}  Y={r.Y:.3f}  t={r.t_max:.1f}  T={r.T}  R={r.R:.1f}  cost={r.cost:.1f}")

print("\nrealized cost per rule")
for rule in ("cosifl", "nd", "ndt"):
    p = make_plan(cfg, rule)
    ev = evaluate_plan(cfg, p)
    print(f"  {rule:>6}: invite {p.invited}, T={ev.T}, R={p.R:.1f}, cost={ev.cost:.1f}, "
          f"wall time {ev.t_max * ev.T:.0f}s")

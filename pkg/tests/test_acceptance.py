"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers;
the lines are repeated in the terminal summary. Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cosifl.domain import ClientAttributes, scenario_from_dict
from cosifl.engine import prepare, render_outputs, rule_cost, run
from cosifl.game import iterated_best_response, nash_equilibrium
from cosifl.incentive import CostCurve, dominates, grid_argmin, optimal_reward, pareto_select
from cosifl.learner import Dataset, TrainConfig, local_train, loss_and_grad, n_params, noise_scale

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
RESULTS: list[str] = []


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {n:>2} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def scenario(name: str, seed: int, **section_overrides):
    raw = json.loads((SCENARIOS / f"{name}.json").read_text())
    raw["seed"] = seed
    for key, value in section_overrides.items():
        sec, field = key.split("__")
        raw.setdefault(sec, {})[field] = value
    return scenario_from_dict(raw)


def random_attrs(rng, n):
    return [
        ClientAttributes(
            id=i,
            epsilon=float(rng.uniform(0.5, 8)),
            gamma=float(rng.uniform(0.5, 1)),
            s=float(rng.uniform(0.2, 2)),
            t_latency=float(rng.uniform(1, 10)),
            nu=1.0,
            alpha=float(rng.uniform(0.2, 1)),
        )
        for i in range(n)
    ]


def max_grid_gain(eq, attrs, n_grid=2000):
    """Largest utility gain any single client gets from a grid deviation."""
    e = np.array([a.alpha * a.gamma for a in attrs])
    s = np.array([a.s for a in attrs])
    best = 0.0
    for k in range(len(attrs)):
        others = float(e @ eq.B_star - e[k] * eq.B_star[k])
        hi = max(4 * eq.B_star[k], 4 * eq.R / s[k])
        b = np.linspace(0.0, hi, n_grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(b > 0, eq.R * e[k] * b / (e[k] * b + others) - s[k] * b, 0.0)
        best = max(best, float(u.max() - eq.utilities[k]))
    return best


def test_01_equilibrium_correctness():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_fp, worst_gain = 0.0, -np.inf
    for _ in range(50):
        attrs = random_attrs(rng, int(rng.integers(2, 13)))
        R = float(rng.uniform(10, 500))
        eq = nash_equilibrium(attrs, R)
        worst_fp = max(worst_fp, float(np.abs(iterated_best_response(attrs, R) - eq.B_star).max()))
        worst_gain = max(worst_gain, max_grid_gain(eq, attrs) / max(1.0, R))
    dt = time.perf_counter() - t0
    ok = worst_fp <= 1e-6 and worst_gain <= 1e-9 and dt < 5
    record(1, "equilibrium correctness", ok,
           f"max |B_ibr - B*| = {worst_fp:.2e}, max grid gain / max(1, R) = {worst_gain:.2e}, {dt:.2f}s")


def test_02_subset_monotonicity():
    rng = np.random.default_rng(2)
    worst = -np.inf
    for _ in range(100):
        n = int(rng.integers(3, 12))
        attrs = random_attrs(rng, n)
        keep = sorted(rng.permutation(n)[: int(rng.integers(2, n))])
        worst = max(worst, nash_equilibrium([attrs[i] for i in keep], 1.0).Y - nash_equilibrium(attrs, 1.0).Y)
    record(2, "subset monotonicity of Y", worst <= 1e-9, f"max Y(sub) - Y(full) = {worst:.2e}")


def test_03_pareto_optimality():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    bad = checked = 0
    for _ in range(3):
        attrs = random_attrs(rng, 10)
        cfg = scenario_from_dict({"K": 10, "clients": [
            {"epsilon": a.epsilon, "gamma": a.gamma, "s": a.s, "t_latency": a.t_latency, "alpha": a.alpha}
            for a in attrs], "cost": {"Theta": 1.0}})
        pts = []
        for r in range(2, 11):
            for sub in itertools.combinations(cfg.clients, r):
                eq = nash_equilibrium(list(sub), 1.0)
                active = [a for a, b in zip(sub, eq.B_star) if b > 0]
                pts.append((eq.Y, max(a.t_latency for a in active)))
        H, _ = pareto_select(cfg.clients, cfg)
        for rec in H:
            checked += 1
            bad += any(dominates(p, (rec.Y, rec.t_max)) for p in pts)
    dt = time.perf_counter() - t0
    record(3, "Pareto selection optimality", bad == 0 and dt < 60,
           f"{checked} records, {bad} dominated, {dt:.1f}s")


def test_04_reward_optimization():
    rng = np.random.default_rng(4)
    worst_steps, worst_d2 = 0.0, np.inf
    for _ in range(20):
        attrs = random_attrs(rng, int(rng.integers(2, 9)))
        cfg = scenario_from_dict({"K": len(attrs), "clients": [
            {"epsilon": a.epsilon, "gamma": a.gamma, "s": a.s, "t_latency": a.t_latency, "alpha": a.alpha}
            for a in attrs], "cost": {"Theta": 1.0}})
        T = int(rng.integers(1, 40))
        curve = CostCurve(cfg.clients, T, cfg)
        lo, hi = cfg.cost.R_lo, cfg.cost.R_hi
        step = (hi - lo) / 999
        g, _ = grid_argmin(curve, lo, hi, n=1000)
        worst_steps = max(worst_steps, abs(optimal_reward(cfg.clients, T, cfg).R - g) / step)
        Rs = np.linspace(hi / 50, hi, 50)
        worst_d2 = min(worst_d2, float(np.diff([curve(r) for r in Rs], 2).min()))
    ok = worst_steps <= 1.0 and worst_d2 >= -1e-6
    record(4, "reward optimization", ok,
           f"max |R* - R_grid| = {worst_steps:.3f} grid steps, min second difference = {worst_d2:.2e}")


def test_05_dp_calibration():
    rng = np.random.default_rng(5)
    d, C = 4, 3
    X = rng.normal(size=(10, d))
    ds = Dataset(X, rng.integers(0, C, 10), C)
    w = rng.normal(size=n_params(d, C))
    sigma, clip, eta = 0.3, 1.0, 0.5
    clean = local_train(w, ds, TrainConfig(batch_size=10, eta=eta, local_steps=1, use_ldp=True, clip=clip,
                                           sigma=0.0), rng)[0]
    cfg = TrainConfig(batch_size=10, eta=eta, local_steps=1, use_ldp=True, clip=clip, sigma=sigma)
    noise = np.array([(local_train(w, ds, cfg, np.random.default_rng(i))[0][0] - clean[0]) / -eta
                      for i in range(10_000)])
    rel = abs(noise.std() - sigma * clip) / (sigma * clip)
    s = noise_scale(0.1, 1.0, 10, 32, 1.0, 1e-5)
    hand = 2 * math.sqrt(2 * math.log(1.25 / 1e-5)) * 0.1 * 1.0 * 10 / (32 * 1.0)
    ok = rel <= 0.05 and abs(s - hand) < 1e-12 and abs(s - 0.3028) < 5e-4
    record(5, "DP calibration", ok, f"std error {100 * rel:.2f}%, sigma = {s:.4f} (hand {hand:.4f})")


def test_06_gradient_check():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        d, C = 4, 3
        ds = Dataset(rng.normal(size=(25, d)), rng.integers(0, C, 25), C)
        w = rng.normal(scale=0.7, size=n_params(d, C))
        _, g = loss_and_grad(w, ds, 0.01)
        fd = np.zeros_like(w)
        for i in range(len(w)):
            e = np.zeros_like(w)
            e[i] = 1e-6
            fd[i] = (loss_and_grad(w + e, ds, 0.01)[0] - loss_and_grad(w - e, ds, 0.01)[0]) / 2e-6
        worst = max(worst, float((np.abs(g - fd) / np.maximum(1e-8, np.abs(g) + np.abs(fd))).max()))
    record(6, "gradient check", worst < 1e-5, f"max relative error {worst:.2e}")


@pytest.mark.slow
def test_07_untargeted_defense():
    t0 = time.perf_counter()
    na, co, fa = [], [], []
    for seed in range(5):
        atk = scenario("desk_untargeted", seed)
        env = prepare(atk)
        na.append(run(atk.replace(attack__kind="none", attack__fraction=0.0), env=env).summary["final_MA"])
        co.append(run(atk, env=env).summary["final_MA"])
        fa.append(run(atk, defense="fedavg", env=env).summary["final_MA"])
    dt = time.perf_counter() - t0
    m_na, m_co, m_fa = np.median(na), np.median(co), np.median(fa)
    ok = m_co >= m_fa + 0.15 and m_co >= 0.9 * m_na and dt < 120
    record(7, "untargeted defense", ok,
           f"median MA cosifl {m_co:.3f}, fedavg {m_fa:.3f}, no attack {m_na:.3f}, {dt:.0f}s")


@pytest.mark.slow
def test_08_targeted_defense():
    co, fa = [], []
    for seed in range(5):
        cfg = scenario("desk_targeted", seed)
        env = prepare(cfg)
        co.append(run(cfg, env=env).summary["final_confidence"])
        fa.append(run(cfg, defense="fedavg", env=env).summary["final_confidence"])
    m_co, m_fa = np.median(co), np.median(fa)
    record(8, "targeted defense", m_co < m_fa,
           f"median misclassification confidence cosifl {m_co:.3f} vs fedavg {m_fa:.3f}")


@pytest.mark.slow
def test_09_cost_ordering():
    ordered, reductions = 0, []
    for seed in range(10):
        cfg = prepare(scenario("cost", seed)).cfg
        c = {r: rule_cost(cfg, r) for r in ("cosifl", "nd", "ndt")}
        ordered += c["cosifl"] <= c["nd"] <= c["ndt"]
        t = [a.t_latency for a in cfg.clients]
        if max(t) / min(t) >= 4:
            reductions.append(1 - c["cosifl"] / c["nd"])
    red = np.array(reductions)
    ok = ordered == 10 and len(red) > 0 and bool(np.all(red >= 0.2))
    record(9, "cost ordering", ok,
           f"ordering holds on {ordered}/10; reduction vs ND >= 20% on {int((red >= 0.2).sum())}/{len(red)} "
           f"wide-latency scenarios (median {np.median(red):.1%})")


@pytest.mark.slow
def test_10_mia_trend():
    multipliers = (0.0, 0.5, 1.0, 2.0)
    aucs = np.zeros((10, len(multipliers)))
    for seed in range(10):
        base = scenario("mia", seed)
        env = prepare(base)
        for j, m in enumerate(multipliers):
            cfg = base.replace(privacy__use_ldp=True, privacy__sigma_override=m)
            aucs[seed, j] = run(cfg, env=env).summary["mia"]["threshold_auc"]
    med = np.median(aucs, axis=0)
    ok = bool(np.all(med[2:] <= 0.55)) and bool(np.all(np.diff(med) <= 0.03))
    record(10, "MIA trend", ok, "median threshold AUC " + ", ".join(f"{m}: {a:.3f}" for m, a in zip(multipliers, med)))


@pytest.mark.slow
def test_11_self_recovery():
    na, r10, fin = [], [], []
    for seed in range(5):
        atk = scenario("desk_untargeted", seed)
        env = prepare(atk)
        na.append(run(atk.replace(attack__kind="none", attack__fraction=0.0), env=env).summary["final_MA"])
        s = run(atk, defense_start_round=11, env=env).summary
        r10.append(s["MA_trajectory"][9])
        fin.append(s["final_MA"])
    m_na, m_r10, m_fin = np.median(na), np.median(r10), np.median(fin)
    ok = m_r10 <= 0.5 * m_na and m_fin >= 0.9 * m_na
    record(11, "self-recovery", ok,
           f"median MA round 10 {m_r10:.3f}, final {m_fin:.3f}, no attack {m_na:.3f}")


def test_12_determinism(tmp_path):
    cfg = scenario("desk_untargeted", 0)
    a = render_outputs(run(cfg))
    b = render_outputs(run(scenario("desk_untargeted", 0)))
    same = a["summary.json"] == b["summary.json"] and a["metrics.csv"] == b["metrics.csv"]
    record(12, "determinism", same, "summary.json and metrics.csv byte-identical" if same else "outputs differ")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))

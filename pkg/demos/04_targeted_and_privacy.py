"""
Targeted poisoning and membership inference
===========================================

A targeted attacker relabels one class as another. Overall accuracy hardly
moves, so the telltale number is the confidence the model puts on the
attacker's target for source-class samples.

The second half trains an over-parameterized model with and without local
differential privacy and asks how well a confidence threshold separates
training members from fresh samples.
"""

from pathlib import Path

from cosifl import load_scenario, prepare, run

root = Path(__file__).resolve().parents[1] / "scenarios"

base = load_scenario(root / "desk_targeted.json")
print("seed  confidence on target (fedavg / alarms)")
for seed in range(5):
    cfg = base.replace(seed=seed)
    env = prepare(cfg)
    conf = [run(cfg, defense=d, env=env).summary["final_confidence"] for d in ("fedavg", "cosifl")]
    print(f"{seed:>4}  {conf[0]:.3f} / {conf[1]:.3f}")

mia = load_scenario(root / "mia.json")
env = prepare(mia)
print("\nnoise multiplier  MA     threshold AUC  logistic AUC")
for m in (0.0, 0.5, 1.0, 2.0):
    s = run(mia.replace(privacy__sigma_override=m), env=env).summary
    print(f"{m:>16}  {s['final_MA']:.3f}  {s['mia']['threshold_auc']:.3f}          {s['mia']['logistic_auc']:.3f}")

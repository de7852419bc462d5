"""
The reward contest between clients
==================================

Each client picks a batch size. A batch is worth ``alpha * gamma`` effective
samples, costs ``s`` per sample, and the reward ``R`` is split in proportion
to effective contributions. This script solves the contest for a few clients
and looks at how the equilibrium behaves.
"""

import numpy as np

from cosifl.domain import ClientAttributes, derive_nu
from cosifl.game import best_response, iterated_best_response, nash_equilibrium, reward_shares


def make_client(i, alpha, gamma, s, t, eps=4.0):
    return ClientAttributes(id=i, epsilon=eps, gamma=gamma, s=s, t_latency=t,
                            nu=derive_nu(eps, 8.0), alpha=alpha, alpha_source="config")


clients = [
    make_client(0, alpha=0.9, gamma=0.95, s=1.0, t=2.0),
    make_client(1, alpha=0.6, gamma=0.90, s=0.8, t=3.5),
    make_client(2, alpha=0.8, gamma=0.70, s=1.4, t=1.5),
    make_client(3, alpha=0.3, gamma=0.60, s=1.8, t=6.0),
]

# Closed-form equilibrium at R = 100
eq = nash_equilibrium(clients, 100.0)
print("client  B*      share   utility")
for k, (b, sh, u) in enumerate(zip(eq.B_star, reward_shares(eq), eq.utilities)):
    print(f"{k:>6}  {b:6.2f}  {sh:6.3f}  {u:7.2f}")
print("active set:", eq.active_set, " conversion rate Y =", round(eq.Y, 4))

# The slowest-converging check: simultaneous best-response dynamics land on
# the same profile, and no client gains by moving alone.
ibr = iterated_best_response(clients, 100.0)
print("max |IBR - closed form| =", np.abs(ibr - eq.B_star).max())
print("best responses at B*:", [round(best_response(k, eq.B_star, 100.0, clients), 4) for k in range(4)])

# Scaling R scales every batch and leaves Y alone.
for R in (10.0, 100.0, 1000.0):
    e = nash_equilibrium(clients, R)
    print(f"R = {R:6.0f}: total batch {e.B_star.sum():8.2f}, Y = {e.Y:.4f}")

# Dropping clients never raises Y.
for keep in ([0, 1, 2, 3], [0, 1, 2], [0, 2], [1, 3]):
    sub = [clients[i] for i in keep]
    print("pool", keep, "Y =", round(nash_equilibrium(sub, 1.0).Y, 4))

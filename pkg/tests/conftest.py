import numpy as np
import pytest

from cosifl.domain import ClientAttributes, ScenarioConfig, derive_nu, scenario_from_dict


def client(i, alpha=1.0, gamma=1.0, s=1.0, t=1.0, eps=8.0, eps_max=8.0):
    return ClientAttributes(
        id=i, epsilon=eps, gamma=gamma, s=s, t_latency=t, nu=derive_nu(eps, eps_max),
        alpha=alpha, alpha_source="config",
    )


def random_clients(rng, n, t_range=(1.0, 10.0)):
    return [
        client(
            i,
            alpha=float(rng.uniform(0.2, 1.0)),
            gamma=float(rng.uniform(0.5, 1.0)),
            s=float(rng.uniform(0.2, 2.0)),
            t=float(rng.uniform(*t_range)),
            eps=float(rng.uniform(0.5, 8.0)),
        )
        for i in range(n)
    ]


def config_with(clients, **overrides) -> ScenarioConfig:
    """Scenario around explicit client attributes with ``Theta`` resolved."""
    raw = {
        "K": len(clients),
        "cost": {"Theta": 1.0},
        "clients": [
            {"id": c.id, "epsilon": c.epsilon, "gamma": c.gamma, "s": c.s, "t_latency": c.t_latency, "alpha": c.alpha}
            for c in clients
        ],
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            raw.setdefault(key, {}).update(value)
        else:
            raw[key] = value
    return scenario_from_dict(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

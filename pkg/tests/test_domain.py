import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosifl.domain import (
    ScenarioError,
    derive_alpha,
    derive_nu,
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    substream,
)


def test_minimal_config_defaults():
    cfg = scenario_from_dict({"K": 4})
    assert cfg.K == 4 and len(cfg.clients) == 4
    assert 0.0 < cfg.phi < 1.0
    assert all(c.alpha is None and c.alpha_source == "pending" for c in cfg.clients)


def test_phi_hand_value():
    cfg = scenario_from_dict({"cost": {"mu": 1.0, "rho": 0.4}, "training": {"eta": 0.1}})
    assert cfg.phi == pytest.approx(0.808, abs=1e-12)


def test_phi_outside_unit_interval_rejected():
    with pytest.raises(ScenarioError, match="phi"):
        scenario_from_dict({"cost": {"mu": 10.0, "rho": 0.0}, "training": {"eta": 0.1}})


def test_zero_epsilon_rejected_with_field_name():
    clients = [{"epsilon": 0.0, "gamma": 1, "s": 1, "t_latency": 1}, {"epsilon": 1, "gamma": 1, "s": 1, "t_latency": 1}]
    with pytest.raises(ScenarioError, match=r"clients\[0\]\.epsilon must be > 0"):
        scenario_from_dict({"K": 2, "clients": clients})


def test_unknown_keys_rejected():
    with pytest.raises(ScenarioError, match="unknown key"):
        scenario_from_dict({"K": 3, "sead": 1})
    with pytest.raises(ScenarioError, match="unknown key"):
        scenario_from_dict({"attack": {"knd": "sign-flip"}})


def test_load_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError, match="parse error"):
        load_scenario(p)


def test_round_trip(tmp_path):
    cfg = scenario_from_dict({"K": 5, "seed": 3, "attack": {"kind": "sign-flip", "fraction": 0.2}})
    path = tmp_path / "s.json"
    dump_scenario(cfg, path)
    again = load_scenario(path)
    assert again == cfg
    assert dump_scenario(again) == dump_scenario(cfg)


def test_lambda_with_cap_resolves_alpha():
    clients = [
        {"epsilon": 4, "gamma": 1, "s": 1, "t_latency": 1, "lambda": 0.6},
        {"epsilon": 4, "gamma": 1, "s": 1, "t_latency": 1, "lambda": 0.0},
    ]
    cfg = scenario_from_dict({"K": 2, "lambda_max": 1.0, "clients": clients})
    assert cfg.clients[0].alpha == pytest.approx(0.64)
    assert cfg.clients[1].alpha == 1.0


def test_derive_nu_examples():
    assert derive_nu(8.0, 8.0) == 1.0
    assert derive_nu(4.0, 8.0) == pytest.approx(0.75)
    assert derive_nu(1e-9, 8.0) < 1e-9
    with pytest.raises(ScenarioError):
        derive_nu(0.0, 8.0)
    with pytest.raises(ScenarioError):
        derive_nu(9.0, 8.0)


def test_derive_alpha_examples():
    assert derive_alpha(0.0, 2.0) == 1.0
    assert derive_alpha(2.0, 2.0) == 0.0
    assert derive_alpha(0.6, 1.0) == pytest.approx(0.64)
    with pytest.raises(ScenarioError, match="rejected"):
        derive_alpha(1.5, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    e1=st.floats(1e-6, 8.0),
    e2=st.floats(1e-6, 8.0),
    theta=st.floats(0.0, 1.0),
)
def test_nu_concave(e1, e2, theta):
    mid = theta * e1 + (1 - theta) * e2
    mid = min(max(mid, 1e-12), 8.0)
    assert derive_nu(mid, 8.0) >= theta * derive_nu(e1, 8.0) + (1 - theta) * derive_nu(e2, 8.0) - 1e-12


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_alpha_monotone_decreasing(a, b):
    lo, hi = sorted((a, b))
    assert derive_alpha(lo, 1.0) >= derive_alpha(hi, 1.0)


def test_substreams_independent_and_reproducible():
    a = substream(1, 3, 4).random(5)
    b = substream(1, 3, 4).random(5)
    c = substream(1, 4, 3).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_replace_revalidates():
    cfg = scenario_from_dict({})
    assert cfg.replace(attack__kind="sign-flip", attack__fraction=0.4).n_malicious == 4
    with pytest.raises(ScenarioError):
        cfg.replace(attack__fraction=1.5)


def test_malicious_ids_seeded():
    cfg = scenario_from_dict({"attack": {"kind": "sign-flip", "fraction": 0.3}})
    ids = cfg.malicious_ids()
    assert len(ids) == 3 and ids == cfg.malicious_ids()
    assert scenario_from_dict({"attack": {"kind": "none", "fraction": 0.3}}).malicious_ids() == ()


def test_shipped_scenarios_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "scenarios"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        load_scenario(f)
        json.loads(f.read_text())


def test_seed_override_resamples_generated_clients():
    a = scenario_from_dict({"seed": 1}).replace(seed=2)
    assert a == scenario_from_dict({"seed": 2})
    fixed = [{"epsilon": 1, "gamma": 1, "s": 1, "t_latency": 1}] * 2
    b = scenario_from_dict({"K": 2, "clients": fixed})
    assert b.replace(seed=9).clients == b.clients

import numpy as np
import pytest
from conftest import client, random_clients
from hypothesis import given, settings
from hypothesis import strategies as st

from cosifl.game import (
    GameError,
    best_response,
    best_response_value,
    conversion_rate,
    integer_batches,
    iterated_best_response,
    nash_equilibrium,
    reward_shares,
    utility,
)


def unit_cost_clients(costs):
    return [client(i, alpha=1.0, gamma=1.0, s=c) for i, c in enumerate(costs)]


def test_utility_hand_value():
    attrs = unit_cost_clients([1, 1])
    assert utility(0, np.array([25.0, 25.0]), 100.0, attrs) == pytest.approx(25.0)
    assert utility(0, np.array([0.0, 25.0]), 100.0, attrs) == 0.0


def test_utility_invariant_to_common_effectiveness_scale():
    a = [client(0, alpha=0.8, gamma=0.5, s=1.0), client(1, alpha=0.6, gamma=0.9, s=2.0)]
    b = [client(0, alpha=0.4, gamma=0.5, s=1.0), client(1, alpha=0.3, gamma=0.9, s=2.0)]
    B = np.array([10.0, 7.0])
    for k in range(2):
        assert utility(k, B, 50.0, a) == pytest.approx(utility(k, B, 50.0, b), rel=1e-12)


def test_best_response_examples():
    attrs = unit_cost_clients([1, 1])
    assert best_response(0, np.array([0.0, 25.0]), 100.0, attrs) == pytest.approx(25.0)
    assert best_response_value(1.0, 1.0, 0.0, 100.0, B_min=3) == 3
    assert best_response_value(1.0, 1e6, 10.0, 100.0) == 0.0


def test_symmetric_two_player():
    eq = nash_equilibrium(unit_cost_clients([1, 1]), 100.0)
    assert np.allclose(eq.B_star, [25.0, 25.0])
    assert eq.Y == pytest.approx(0.5)
    assert conversion_rate(eq) == pytest.approx(0.5)


def test_three_player_with_inactive():
    eq = nash_equilibrium(unit_cost_clients([1, 1, 10]), 90.0)
    assert np.allclose(eq.q_star, [22.5, 22.5, 0.0])
    assert eq.active_set == (0, 1)


def test_needs_two_players():
    with pytest.raises(GameError):
        nash_equilibrium(unit_cost_clients([1]), 10.0)
    with pytest.raises(GameError):
        nash_equilibrium([client(0, alpha=0.0), client(1)], 10.0)


def grid_deviation_gain(eq, attrs, k, n=400):
    base = eq.utilities[k]
    hi = max(4 * eq.B_star[k], 4 * eq.R / max(attrs[k].s, 1e-9))
    best = 0.0
    for b in np.linspace(0.0, hi, n):
        B = eq.B_star.copy()
        B[k] = b
        best = max(best, utility(k, B, eq.R, attrs) - base)
    return best


def test_equilibrium_matches_oracle_and_no_deviation(rng):
    for _ in range(20):
        n = int(rng.integers(2, 9))
        attrs = random_clients(rng, n)
        R = float(rng.uniform(10, 500))
        eq = nash_equilibrium(attrs, R)
        oracle = iterated_best_response(attrs, R)
        assert np.allclose(eq.B_star, oracle, atol=1e-6 * max(1.0, R))
        assert np.all(eq.utilities[eq.B_star > 0] >= 0)
        assert np.all(eq.B_star[eq.B_star == 0] == 0)
        for k in range(n):
            assert grid_deviation_gain(eq, attrs, k) <= 1e-9 * max(1.0, R)


def test_unique_from_random_starts(rng):
    attrs = random_clients(rng, 6)
    sols = [iterated_best_response(attrs, 100.0, B0=rng.uniform(0, 50, 6)) for _ in range(5)]
    for s in sols[1:]:
        assert np.allclose(s, sols[0], atol=1e-6)


def test_fixed_point_of_best_response(rng):
    for _ in range(10):
        attrs = random_clients(rng, 5)
        eq = nash_equilibrium(attrs, 100.0)
        for k in range(5):
            assert best_response(k, eq.B_star, 100.0, attrs) == pytest.approx(eq.B_star[k], abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0.1, 50.0))
def test_scale_covariance(seed, t):
    attrs = random_clients(np.random.default_rng(seed), 5)
    a = nash_equilibrium(attrs, 10.0)
    b = nash_equilibrium(attrs, 10.0 * t)
    assert np.allclose(b.B_star, t * a.B_star, rtol=1e-9, atol=1e-12)
    assert b.Y == pytest.approx(a.Y, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_subset_monotonicity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 10))
    attrs = random_clients(rng, n)
    keep = rng.permutation(n)[: int(rng.integers(2, n))]
    sub = [attrs[i] for i in sorted(keep)]
    assert nash_equilibrium(sub, 1.0).Y <= nash_equilibrium(attrs, 1.0).Y + 1e-9


def test_reward_shares_sum_to_one(rng):
    eq = nash_equilibrium(random_clients(rng, 7), 123.0)
    shares = reward_shares(eq)
    assert shares.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(shares[eq.B_star == 0] == 0)


def test_integer_batches():
    eq = nash_equilibrium(unit_cost_clients([1, 1, 10]), 90.0)
    b = integer_batches(eq, B_min=1, caps=[20, 100, 100])
    assert b == {0: 20, 1: 22}
    tiny = nash_equilibrium(unit_cost_clients([1, 1]), 1.0)
    assert integer_batches(tiny, B_min=1) == {0: 1, 1: 1}

import numpy as np
import pytest

from psomdp import NoActionsAvailable, NonConvergence, SeqId, compose, validate
from psomdp.errors import ValidationError
from psomdp.oracle import finite_horizon_value, horizon_for
from psomdp.solver import (
    QTable,
    SolverConfig,
    announced_checkin_q,
    extract_policy,
    solve_composite,
    tail_continuation_value,
    unannounced_bonus_value,
    value_iteration,
)

from conftest import random_model


def corridor(gamma=0.9, k=2):
    # cells 0 -> 1 -> 2 (goal, absorbing); action 0 moves right, action 1 moves left
    return validate({
        "num_states": 4, "num_actions": 2, "gamma": gamma, "checkin_period": k,
        "transitions": [
            [[[1, 1.0]], [[0, 1.0]]],
            [[[2, 1.0]], [[0, 1.0]]],
            [[[3, 1.0]], [[3, 1.0]]],
            [[[3, 1.0]], [[3, 1.0]]],
        ],
        "rewards": [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
    })


def test_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(tolerance=0)
    with pytest.raises(ValidationError):
        SolverConfig(max_iterations=0)


def test_zero_rewards():
    m = random_model(1, S=4, A=2, k=2)
    m = validate({**m.to_dict(), "rewards": np.zeros((4, 2)).tolist()})
    sol = solve_composite(m)
    assert np.all(sol.values == 0) and np.all(sol.q.values == 0)


def test_geometric_self_loop():
    m = validate({"num_states": 1, "num_actions": 1, "gamma": 0.5, "checkin_period": 1,
                  "transitions": [[[[0, 1.0]]]], "rewards": [[1.0]]})
    sol = solve_composite(m)
    assert sol.values[0] == pytest.approx(2.0, abs=1e-8)


def test_corridor_against_finite_horizon():
    m = corridor()
    sol = solve_composite(m)
    H = horizon_for(0.9, 2, 1e-12)
    fh = finite_horizon_value(m, sol.policy, 0, H)
    assert sol.values[0] == pytest.approx(fh, abs=1e-8)
    # goal entered on step 1 with reward 1: U(start) = 0.9
    assert sol.values[0] == pytest.approx(0.9, abs=1e-8)
    # first action steps toward the goal
    assert sol.policy[0].decode(2)[0] == 0 and sol.policy[1].decode(2)[0] == 0


def test_tie_break_smallest_code():
    q = QTable(1, 3, np.array([0, 3]), np.array([0, 1, 2]), np.array([1.0, 2.0, 2.0]))
    assert extract_policy(q) == [SeqId(1, 1)]
    q = QTable(1, 3, np.array([0, 3]), np.array([0, 1, 2]), np.array([3.0, 2.0, 1.0]))
    assert extract_policy(q) == [SeqId(1, 0)]


def test_restricted_availability():
    m = corridor(k=1)
    c = compose(m, 1)
    sol = value_iteration(c, available=[[1], [0, 1], [0], [0]])
    assert sol.policy[0] == SeqId(1, 1)
    assert sol.values[0] == pytest.approx(0.0)


def test_no_actions_available():
    c = compose(corridor(k=1), 1)
    with pytest.raises(NoActionsAvailable) as exc:
        value_iteration(c, available=[[0], [], [0], [0]])
    assert exc.value.state == 1


def test_non_convergence():
    m = random_model(4, S=4, A=2, k=1, gamma=0.99)
    with pytest.raises(NonConvergence) as exc:
        solve_composite(m, SolverConfig(max_iterations=3))
    assert exc.value.iterations == 3 and exc.value.residual > 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_residual_and_monotone_convergence(seed):
    m = random_model(seed, S=5, A=3, k=2)
    c = compose(m, 2)
    sol = value_iteration(c)
    g = m.discount**2
    succ_u = np.add.reduceat(c.probs * sol.values[c.indices], c.indptr[:-1])
    bellman = c.rewards + g * succ_u
    assert np.max(np.abs(bellman - sol.q.values)) <= 1e-9
    hist = sol.residual_history
    assert np.all(np.diff(hist[1:]) <= 1e-15 + 1e-12 * hist[1:-1])
    best = [sol.q.get(s, p) for s, p in enumerate(sol.policy)]
    assert np.allclose(best, sol.values, atol=0)


def test_bonus_tau0_is_u_star():
    m = random_model(8, S=4, A=2, k=3)
    sol = solve_composite(m)
    bonus = unannounced_bonus_value(m, sol.values, 0)
    assert np.allclose(bonus, sol.values, atol=2e-9)


def test_single_action_bonus_equals_tail():
    m = random_model(3, S=4, A=1, k=3)
    sol = solve_composite(m)
    for tau in (1, 2):
        tail = tail_continuation_value(m, sol.values, SeqId(3 - tau, 0))
        assert np.array_equal(unannounced_bonus_value(m, sol.values, tau), tail)


def test_announced_single_action_deterministic():
    m = validate({"num_states": 3, "num_actions": 1, "gamma": 0.8, "checkin_period": 3,
                  "transitions": [[[[1, 1.0]]], [[[2, 1.0]]], [[[0, 1.0]]]],
                  "rewards": [[1.0], [0.5], [0.0]]})
    sol = solve_composite(m)
    for tau in (1, 2):
        q1 = announced_checkin_q(m, sol.q, tau)
        assert np.allclose(q1.values, sol.q.values, atol=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_checkin_orderings(seed):
    m = random_model(seed, S=4, A=2, k=3)
    k, A = 3, 2
    sol = solve_composite(m)
    for tau in range(k):
        bonus = unannounced_bonus_value(m, sol.values, tau)
        # the optimal policy's own tail is one candidate of the bonus re-plan
        for s in range(m.num_states):
            tail = sol.policy[s].suffix(tau, A)
            cont = tail_continuation_value(m, sol.values, tail)
            assert np.all(bonus >= cont - 1e-8)
        if tau == 0:
            continue
        q1 = announced_checkin_q(m, sol.q, tau)
        for s in range(m.num_states):
            for seq, v in sol.q.items(s):
                assert q1.get(s, seq.prefix(tau, A)) >= v - 1e-8
        best = q1.max_per_state()
        assert np.all(best >= sol.values - 1e-8)
        # realized value of an unannounced bonus: prefix of the optimal sequence, then re-plan
        composed = compose(m, tau, [p.prefix(tau, A) for p in sol.policy])
        realized = np.array([
            composed.reward(s, sol.policy[s].prefix(tau, A)) + m.discount**tau * sum(
                p * bonus[t] for t, p in composed.distribution(s, sol.policy[s].prefix(tau, A)).items())
            for s in range(m.num_states)])
        assert np.all(realized >= sol.values - 1e-8)
        assert np.all(best >= realized - 1e-8)


def test_tau_range_checked():
    m = random_model(0, S=3, A=2, k=2)
    sol = solve_composite(m)
    with pytest.raises(ValidationError):
        unannounced_bonus_value(m, sol.values, 2)
    with pytest.raises(ValidationError):
        announced_checkin_q(m, sol.q, 0)

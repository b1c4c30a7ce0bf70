import sys

import numpy as np
import pytest

from psomdp import validate
from psomdp.domains import build_gridworld, builtin


def random_raw(seed, S=None, A=None, k=None, gamma=None, nop=False, max_support=3):
    """Seeded random model in the JSON layout; sizes drawn when not given."""
    rng = np.random.default_rng(seed)
    S = S or int(rng.integers(2, 7))
    A = A or int(rng.integers(1, 4))
    k = k or int(rng.integers(1, 5))
    gamma = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    transitions, rewards = [], []
    for s in range(S):
        rows, rr = [], []
        for a in range(A):
            if nop and a == A - 1:
                rows.append([[s, 1.0]])
                rr.append(0.0)
                continue
            n = int(rng.integers(1, min(S, max_support) + 1))
            succ = sorted(rng.choice(S, size=n, replace=False).tolist())
            p = rng.dirichlet(np.ones(n))
            p[-1] = 1.0 - p[:-1].sum()
            rows.append([[int(t), float(q)] for t, q in zip(succ, p)])
            rr.append(float(rng.uniform(-0.5, 1.0)))
        transitions.append(rows)
        rewards.append(rr)
    return {"num_states": S, "num_actions": A, "gamma": gamma, "checkin_period": k,
            "nop_action": A - 1 if nop else None, "transitions": transitions, "rewards": rewards}


def random_model(seed, **kw):
    return validate(random_raw(seed, **kw))


def oracle_instance(seed):
    """The 100-seed family used by the acceptance suite: |S| <= 6, |A| <= 3, k <= 4."""
    rng = np.random.default_rng(10_000 + seed)
    S = int(rng.integers(2, 7))
    A = int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    nop = bool(rng.integers(0, 2)) and A >= 2
    return random_model(seed, S=S, A=A, k=k, nop=nop)


@pytest.fixture(scope="session")
def grid4x7():
    return build_gridworld(builtin("benchmark_4x7"))


@pytest.fixture(scope="session")
def grid6x11():
    return build_gridworld(builtin("benchmark_6x11"))


@pytest.fixture
def two_state():
    # s1 absorbing; from s0 the single action stays with 0.7 and moves with 0.3
    return validate({
        "num_states": 2, "num_actions": 1, "gamma": 0.5, "checkin_period": 2,
        "transitions": [[[[0, 0.7], [1, 0.3]]], [[[1, 1.0]]]],
        "rewards": [[1.0], [2.0]],
    })


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

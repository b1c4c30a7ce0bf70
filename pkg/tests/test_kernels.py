"""The numba and numpy backends must agree bit for bit."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from psomdp import _kernels_numba as knb
from psomdp import _kernels_numpy as knp
from psomdp import compose
from psomdp.model import DROP_TOL, _base_arrays
from psomdp.solver import SolverConfig

from conftest import random_model


def _extend_inputs(model, tau):
    prev = compose(model, tau)
    A = model.num_actions
    parent = np.repeat(np.arange(prev.num_rows), A)
    actions = np.tile(np.arange(A), prev.num_rows)
    return (prev.indptr, prev.indices, prev.probs, prev.rewards, parent, actions,
            *_base_arrays(model), model.num_states, A, model.discount**tau, DROP_TOL, None)


@pytest.mark.parametrize("seed", range(5))
def test_extend_rows_parity(seed):
    m = random_model(seed, S=6, A=3, k=3)
    args = _extend_inputs(m, 2)
    a = knb.extend_rows(*args)
    b = knp.extend_rows(*args)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_extend_rows_parity_grid(grid4x7):
    args = _extend_inputs(grid4x7, 3)
    for x, y in zip(knb.extend_rows(*args), knp.extend_rows(*args)):
        assert np.array_equal(x, y)


def test_backup_and_vi_parity(grid4x7):
    c = compose(grid4x7, 2)
    v = np.linspace(0, 1, grid4x7.num_states)
    g = 0.95**2
    assert np.array_equal(knb.backup(c.indptr, c.indices, c.probs, c.rewards, v, g),
                          knp.backup(c.indptr, c.indices, c.probs, c.rewards, v, g))
    cfg = SolverConfig()
    ra = knb.value_iteration(c.state_ptr, c.indptr, c.indices, c.probs, c.rewards, g,
                             cfg.tolerance, cfg.max_iterations)
    rb = knp.value_iteration(c.state_ptr, c.indptr, c.indices, c.probs, c.rewards, g,
                             cfg.tolerance, cfg.max_iterations)
    assert np.array_equal(ra[0], rb[0]) and np.array_equal(ra[1], rb[1]) and ra[2] == rb[2]


def test_budget_checked_before_fill(grid6x11):
    from psomdp.errors import CapacityExceeded

    args = list(_extend_inputs(grid6x11, 2))
    args[-1] = 1000
    with pytest.raises(CapacityExceeded):
        knb.extend_rows(*args)
    with pytest.raises(CapacityExceeded):
        knp.extend_rows(*args)


SCRIPT = """
import json
from psomdp import backend_name
from psomdp.domains import builtin, build_gridworld
from psomdp.bnb import solve_bnb
m = build_gridworld(builtin("benchmark_4x7"))
sol, _ = solve_bnb(m)
print(json.dumps({"backend": backend_name(), "values": [v.hex() for v in sol.values]}))
"""


def test_backend_switch_end_to_end():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, PSOMDP_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                             text=True, check=True)
        rec = json.loads(res.stdout.strip().splitlines()[-1])
        out[rec["backend"]] = rec["values"]
    assert set(out) == {"numba", "numpy"}
    assert out["numba"] == out["numpy"]

"""Slow, independent reference implementations.

Nothing here touches the sparse composition code in ``model``: the model is
expanded to a dense ``(S, A, S)`` tensor and every sequence is composed from
scratch by forward products over the full state space.
"""
from __future__ import annotations

import time
from itertools import product

import numpy as np

from .errors import NonConvergence, TooLarge, ValidationError
from .model import PsoMdp, SeqId
from .solver import QTable, Solution, SolverConfig, extract_policy

MAX_DENSE_ENTRIES = 10**7


def _dense(model: PsoMdp):
    S, A = model.num_states, model.num_actions
    T = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            for s2, p in model.successors(s, a):
                T[s, a, s2] += p
    return T, np.asarray(model.rewards, dtype=float)


def _compose_dense(T, R, actions, gamma):
    """Every start state at once: returns (S x S kernel, per-state discounted reward)."""
    S = T.shape[0]
    dist = np.eye(S)
    reward = np.zeros(S)
    for t, a in enumerate(actions):
        reward += gamma**t * (dist @ R[:, a])
        dist = dist @ T[:, a, :]
    return dist, reward


def brute_force_solve(model: PsoMdp, config: SolverConfig | None = None) -> Solution:
    """Dense enumeration of all ``|A|^k`` sequences followed by dense value iteration."""
    config = config or SolverConfig()
    S, A, k, g = model.num_states, model.num_actions, model.checkin_period, model.discount
    n_seq = A**k
    if S * S * n_seq > MAX_DENSE_ENTRIES:
        raise TooLarge(f"TooLarge: {S}*{S}*{A}^{k} dense entries exceed {MAX_DENSE_ENTRIES}")
    t0 = time.perf_counter()
    T, R = _dense(model)
    Tk = np.empty((n_seq, S, S))
    Rk = np.empty((S, n_seq))
    for code in range(n_seq):
        # little-endian: action t is digit t of the code
        actions = [(code // A**t) % A for t in range(k)]
        Tk[code], Rk[:, code] = _compose_dense(T, R, actions, g)
    gk = g**k
    q = np.zeros((S, n_seq))
    residual = np.inf
    it = 0
    while it < config.max_iterations:
        it += 1
        u = q.max(axis=1)
        new = Rk + gk * np.einsum("cst,t->sc", Tk, u)
        residual = float(np.abs(new - q).max())
        q = new
        if residual <= config.tolerance:
            break
    if residual > config.tolerance:
        raise NonConvergence(residual, it)
    table = QTable(k, A, np.arange(S + 1) * n_seq, np.tile(np.arange(n_seq), S), q.ravel())
    return Solution(q=table, values=q.max(axis=1), policy=extract_policy(table),
                    stats={"iterations": it, "residual": residual, "method": "brute_force",
                           "seconds": time.perf_counter() - t0})


def _policy_list(model: PsoMdp, policy) -> list[list[int]]:
    S, A, k = model.num_states, model.num_actions, model.checkin_period
    if isinstance(policy, dict):
        policy = [policy[s] for s in range(S)]
    if len(policy) != S:
        raise ValidationError(f"policy has {len(policy)} entries for {S} states")
    out = []
    for p in policy:
        acts = p.decode(A) if isinstance(p, SeqId) else [int(a) for a in p]
        if len(acts) != k:
            raise ValidationError(f"policy sequence {acts} does not have length {k}")
        out.append(acts)
    return out


def _policy_period(model, policy):
    """Per-period kernel and reward of a stationary sequence policy."""
    T, R = _dense(model)
    S = model.num_states
    P = np.empty((S, S))
    r = np.empty(S)
    for s, acts in enumerate(_policy_list(model, policy)):
        dist, rew = _compose_dense(T, R, acts, model.discount)
        P[s], r[s] = dist[s], rew[s]
    return P, r


def finite_horizon_value(model: PsoMdp, policy, start: int, horizon_periods: int) -> float:
    """Expected discounted return over ``horizon_periods`` check-in periods, computed exactly."""
    P, r = _policy_period(model, policy)
    gk = model.discount**model.checkin_period
    d = np.zeros(model.num_states)
    d[start] = 1.0
    total = 0.0
    for h in range(horizon_periods):
        total += gk**h * float(d @ r)
        d = d @ P
    return total


def horizon_for(gamma: float, k: int, bound: float) -> int:
    """Smallest H with ``gamma**(k*H) < bound``."""
    if gamma == 0.0:
        return 1
    return int(np.floor(np.log(bound) / (k * np.log(gamma)))) + 1


def simulate_policy(model: PsoMdp, policy, start: int, episodes: int, horizon_periods: int,
                    seed: int, first_episode: int = 0) -> tuple[float, float]:
    """Monte-Carlo discounted return: (mean, standard error).

    Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed,
    spawn_key=(episode,))``, so episode ``i`` always draws the same uniforms
    whatever the episode count or evaluation order. Each step consumes one
    double and picks the successor by inverse-CDF over the dense row.
    ``first_episode`` offsets the episode indices, so a run can be split into
    chunks that reproduce the unsplit result.
    """
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    S, k, g = model.num_states, model.checkin_period, model.discount
    T, R = _dense(model)
    cdf = np.cumsum(T, axis=2)
    acts = np.asarray(_policy_list(model, policy), dtype=np.int64)  # (S, k)
    steps = horizon_periods * k
    u = np.empty((episodes, steps))
    for e in range(episodes):
        ss = np.random.SeedSequence(seed, spawn_key=(first_episode + e,))
        u[e] = np.random.Generator(np.random.PCG64(ss)).random(steps)

    returns = np.zeros(episodes)
    state = np.full(episodes, start, dtype=np.int64)
    origin = state.copy()
    disc = 1.0
    for t in range(steps):
        if t % k == 0:
            origin = state.copy()
        a = acts[origin, t % k]
        returns += disc * R[state, a]
        c = cdf[state, a]  # (episodes, S)
        nxt = (u[:, t][:, None] >= c).sum(axis=1)
        state = np.minimum(nxt, S - 1)
        disc *= g
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return mean, se


def enumerate_paths_value(model: PsoMdp, actions, start: int) -> tuple[dict, float]:
    """Literal sum over every intermediate-state path: (final distribution, discounted reward)."""
    T, R = _dense(model)
    S, g = model.num_states, model.discount
    dist, reward = {}, 0.0
    for path in product(range(S), repeat=len(actions)):
        p, rew, s = 1.0, 0.0, start
        for t, (a, s2) in enumerate(zip(actions, path)):
            rew += g**t * R[s, a]
            p *= T[s, a, s2]
            s = s2
        if p > 0.0:
            dist[s] = dist.get(s, 0.0) + p
            reward += p * rew
    return dist, reward

"""numba implementations of the hot loops.

Work is split over rows or states with ``prange``; every output element is
computed by exactly one iteration in a fixed order, so results do not depend
on the thread count.
"""
import numpy as np
from numba import njit, prange

from ._budget import check_budget

_CHUNK = 256


@njit(cache=True)
def _accumulate(i, prev_indptr, prev_indices, prev_probs, parent_rows, actions,
                base_indptr, base_indices, base_probs, base_rewards, num_actions,
                buf, mark, touched):
    p = parent_rows[i]
    a = actions[i]
    ntouched = 0
    rsum = 0.0
    for j in range(prev_indptr[p], prev_indptr[p + 1]):
        mid = prev_indices[j]
        w = prev_probs[j]
        rsum += w * base_rewards[mid * num_actions + a]
        r = mid * num_actions + a
        for jj in range(base_indptr[r], base_indptr[r + 1]):
            t = base_indices[jj]
            if not mark[t]:
                mark[t] = True
                touched[ntouched] = t
                ntouched += 1
            buf[t] += w * base_probs[jj]
    return ntouched, rsum


@njit(parallel=True, cache=True)
def _count(prev_indptr, prev_indices, prev_probs, parent_rows, actions,
           base_indptr, base_indices, base_probs, base_rewards, num_states,
           num_actions, drop_tol):
    n = parent_rows.size
    counts = np.zeros(n, dtype=np.int64)
    nchunks = (n + _CHUNK - 1) // _CHUNK
    for c in prange(nchunks):
        buf = np.zeros(num_states)
        mark = np.zeros(num_states, dtype=np.bool_)
        touched = np.empty(num_states, dtype=np.int64)
        for i in range(c * _CHUNK, min(n, (c + 1) * _CHUNK)):
            nt, _ = _accumulate(i, prev_indptr, prev_indices, prev_probs,
                                parent_rows, actions, base_indptr, base_indices,
                                base_probs, base_rewards, num_actions, buf, mark,
                                touched)
            cnt = 0
            for q in range(nt):
                t = touched[q]
                if buf[t] >= drop_tol:
                    cnt += 1
                buf[t] = 0.0
                mark[t] = False
            counts[i] = cnt
    return counts


@njit(parallel=True, cache=True)
def _fill(prev_indptr, prev_indices, prev_probs, prev_rewards, parent_rows, actions,
          base_indptr, base_indices, base_probs, base_rewards, num_states,
          num_actions, discount_pow, drop_tol, indptr, out_indices, out_probs,
          out_rewards):
    n = parent_rows.size
    nchunks = (n + _CHUNK - 1) // _CHUNK
    for c in prange(nchunks):
        buf = np.zeros(num_states)
        mark = np.zeros(num_states, dtype=np.bool_)
        touched = np.empty(num_states, dtype=np.int64)
        for i in range(c * _CHUNK, min(n, (c + 1) * _CHUNK)):
            nt, rsum = _accumulate(i, prev_indptr, prev_indices, prev_probs,
                                   parent_rows, actions, base_indptr, base_indices,
                                   base_probs, base_rewards, num_actions, buf, mark,
                                   touched)
            out_rewards[i] = prev_rewards[parent_rows[i]] + discount_pow * rsum
            order = np.sort(touched[:nt])
            pos = indptr[i]
            kept = 0.0
            dropped = False
            for q in range(nt):
                t = order[q]
                v = buf[t]
                if v >= drop_tol:
                    out_indices[pos] = t
                    out_probs[pos] = v
                    kept += v
                    pos += 1
                else:
                    dropped = True
                buf[t] = 0.0
                mark[t] = False
            if dropped:
                for q in range(indptr[i], pos):
                    out_probs[q] /= kept


def extend_rows(prev_indptr, prev_indices, prev_probs, prev_rewards, parent_rows,
                actions, base_indptr, base_indices, base_probs, base_rewards,
                num_states, num_actions, discount_pow, drop_tol, budget_bytes=None):
    parent_rows = np.ascontiguousarray(parent_rows, dtype=np.int64)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    args = (prev_indptr, prev_indices, prev_probs)
    counts = _count(*args, parent_rows, actions, base_indptr, base_indices,
                    base_probs, base_rewards, num_states, num_actions, drop_tol)
    indptr = np.zeros(parent_rows.size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    nnz = int(indptr[-1])
    check_budget(nnz, parent_rows.size, budget_bytes)
    out_indices = np.empty(nnz, dtype=np.int32)
    out_probs = np.empty(nnz)
    out_rewards = np.empty(parent_rows.size)
    _fill(*args, prev_rewards, parent_rows, actions, base_indptr, base_indices,
          base_probs, base_rewards, num_states, num_actions, float(discount_pow),
          drop_tol, indptr, out_indices, out_probs, out_rewards)
    return indptr, out_indices, out_probs, out_rewards


def count_rows(prev_indptr, prev_indices, prev_probs, parent_rows, actions,
               base_indptr, base_indices, base_probs, base_rewards, num_states,
               num_actions, drop_tol):
    """Exact nnz of each extended row, without materializing it."""
    return _count(prev_indptr, prev_indices, prev_probs,
                  np.ascontiguousarray(parent_rows, dtype=np.int64),
                  np.ascontiguousarray(actions, dtype=np.int64), base_indptr,
                  base_indices, base_probs, base_rewards, num_states, num_actions,
                  drop_tol)


@njit(parallel=True, cache=True)
def backup(indptr, indices, probs, rewards, values, g):
    n = rewards.size
    out = np.empty(n)
    for i in prange(n):
        acc = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            acc += probs[j] * values[indices[j]]
        out[i] = rewards[i] + g * acc
    return out


@njit(parallel=True, cache=True)
def _sweep(state_ptr, indptr, indices, probs, rewards, values, q, g, q_new,
           values_new, res_state):
    ns = state_ptr.size - 1
    for s in prange(ns):
        best = -np.inf
        res = 0.0
        for i in range(state_ptr[s], state_ptr[s + 1]):
            acc = 0.0
            for j in range(indptr[i], indptr[i + 1]):
                acc += probs[j] * values[indices[j]]
            v = rewards[i] + g * acc
            d = abs(v - q[i])
            if d > res:
                res = d
            q_new[i] = v
            if v > best:
                best = v
        values_new[s] = best
        res_state[s] = res


@njit(cache=True)
def _vi_loop(state_ptr, indptr, indices, probs, rewards, g, tol, max_iter):
    ns = state_ptr.size - 1
    q = np.zeros(rewards.size)
    q_new = np.empty(rewards.size)
    values = np.zeros(ns)
    values_new = np.empty(ns)
    res_state = np.zeros(ns)
    history = np.empty(max_iter)
    residual = np.inf
    it = 0
    while it < max_iter:
        _sweep(state_ptr, indptr, indices, probs, rewards, values, q, g, q_new,
               values_new, res_state)
        residual = 0.0
        for s in range(ns):
            if res_state[s] > residual:
                residual = res_state[s]
        history[it] = residual
        it += 1
        q, q_new = q_new, q
        values, values_new = values_new, values
        if residual <= tol:
            break
    return q, values, it, residual, history[:it].copy()


def value_iteration(state_ptr, indptr, indices, probs, rewards, g, tol, max_iter):
    return _vi_loop(state_ptr, indptr, indices, probs, rewards, float(g),
                    float(tol), int(max_iter))

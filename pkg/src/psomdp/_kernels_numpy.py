"""Pure numpy/scipy implementations of the hot loops."""
import numpy as np
import scipy.sparse as sp

from ._budget import check_budget


def extend_rows(prev_indptr, prev_indices, prev_probs, prev_rewards, parent_rows,
                actions, base_indptr, base_indices, base_probs, base_rewards,
                num_states, num_actions, discount_pow, drop_tol, budget_bytes=None):
    """Extend composed rows by one atomic action each.

    Row ``i`` of the result is ``parent_rows[i]`` of the previous composition
    followed by ``actions[i]``. Returns ``(indptr, indices, probs, rewards)``.
    """
    parent_rows = np.asarray(parent_rows, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    n = parent_rows.size
    prev = sp.csr_matrix((prev_probs, prev_indices, prev_indptr),
                         shape=(prev_indptr.size - 1, num_states))
    base_r = base_rewards.reshape(num_states, num_actions)
    rewards = np.empty(n)
    blocks, order = [], []
    for a in np.unique(actions):
        sel = np.flatnonzero(actions == a)
        rows_a = np.arange(num_states) * num_actions + a
        t_a = sp.csr_matrix(
            (base_probs, base_indices, base_indptr),
            shape=(base_indptr.size - 1, num_states))[rows_a]
        sub = prev[parent_rows[sel]]
        blocks.append(sub @ t_a)
        rewards[sel] = prev_rewards[parent_rows[sel]] + discount_pow * (sub @ base_r[:, a])
        order.append(sel)
    if n == 0:
        return (np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int32),
                np.zeros(0), rewards)
    check_budget(sum(b.nnz for b in blocks), n, budget_bytes)
    stacked = sp.vstack(blocks, format="csr")
    perm = np.empty(n, dtype=np.int64)
    perm[np.concatenate(order)] = np.arange(n)
    out = stacked[perm]
    out.sort_indices()
    probs = out.data
    small = probs < drop_tol
    if small.any():
        probs = probs.copy()
        probs[small] = 0.0
        out = sp.csr_matrix((probs, out.indices, out.indptr), shape=out.shape)
        out.eliminate_zeros()
        sums = np.add.reduceat(out.data, out.indptr[:-1])
        out.data /= np.repeat(sums, np.diff(out.indptr))
    return (out.indptr.astype(np.int64), out.indices.astype(np.int32),
            out.data.astype(np.float64), rewards)


def _row_plan(indptr):
    """Rows ordered by decreasing length, so step ``j`` touches a prefix of them."""
    lens = np.diff(indptr)
    perm = np.argsort(-lens, kind="stable")
    starts = indptr[:-1][perm]
    active = np.searchsorted(-lens[perm], -np.arange(lens.max(initial=0)), side="left")
    return perm, starts, active


def _row_dots(plan, probs, gathered, n):
    # left-to-right accumulation per row, matching the compiled kernel bit for bit
    perm, starts, active = plan
    acc = np.zeros(n)
    for j, cnt in enumerate(active):
        pos = starts[:cnt] + j
        acc[:cnt] += probs[pos] * gathered[pos]
    out = np.empty(n)
    out[perm] = acc
    return out


def backup(indptr, indices, probs, rewards, values, g, plan=None):
    """One Bellman backup per row: ``r + g * sum_j p_j * values[idx_j]``."""
    if rewards.size == 0:
        return rewards.copy()
    plan = plan or _row_plan(indptr)
    return rewards + g * _row_dots(plan, probs, values[indices], rewards.size)


def value_iteration(state_ptr, indptr, indices, probs, rewards, g, tol, max_iter):
    """Synchronous value iteration from a zero Q.

    Returns ``(q, values, iterations, residual, history)``.
    """
    q = np.zeros(rewards.size)
    values = np.zeros(state_ptr.size - 1)
    history = np.empty(max_iter)
    residual = np.inf
    it = 0
    plan = _row_plan(indptr)
    while it < max_iter:
        q_new = backup(indptr, indices, probs, rewards, values, g, plan)
        residual = float(np.max(np.abs(q_new - q))) if q.size else 0.0
        history[it] = residual
        it += 1
        q = q_new
        values = np.maximum.reduceat(q, state_ptr[:-1])
        if residual <= tol:
            break
    return q, values, it, residual, history[:it].copy()

"""Composite-action value iteration and check-in value functions."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._accel import set_threads
from .errors import NoActionsAvailable, NonConvergence, ValidationError
from .model import ComposedModel, PsoMdp, SeqId, _per_state, compose


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-9
    max_iterations: int = 100_000
    threads: int | None = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValidationError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class QTable:
    """Values keyed by ``(state, sequence)``; rows grouped by state, sorted by code."""

    length: int
    num_actions: int
    state_ptr: np.ndarray
    codes: np.ndarray
    values: np.ndarray

    @property
    def num_states(self) -> int:
        return self.state_ptr.size - 1

    @classmethod
    def from_composed(cls, composed: ComposedModel, values, length=None) -> "QTable":
        return cls(composed.length if length is None else length, composed.num_actions,
                   composed.state_ptr, composed.codes, np.asarray(values, dtype=float))

    def _row(self, s, seq):
        code = seq.code if isinstance(seq, SeqId) else int(seq)
        lo, hi = self.state_ptr[s], self.state_ptr[s + 1]
        i = lo + int(np.searchsorted(self.codes[lo:hi], code))
        if i >= hi or self.codes[i] != code:
            raise KeyError((s, seq))
        return i

    def get(self, s: int, seq) -> float:
        return float(self.values[self._row(s, seq)])

    def __contains__(self, key) -> bool:
        try:
            self._row(*key)
        except KeyError:
            return False
        return True

    def items(self, s: int):
        lo, hi = self.state_ptr[s], self.state_ptr[s + 1]
        return [(SeqId(self.length, int(c)), float(v))
                for c, v in zip(self.codes[lo:hi], self.values[lo:hi])]

    def row_states(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_states), np.diff(self.state_ptr))

    def max_per_state(self) -> np.ndarray:
        if np.any(np.diff(self.state_ptr) == 0):
            raise NoActionsAvailable(int(np.argmax(np.diff(self.state_ptr) == 0)))
        return np.maximum.reduceat(self.values, self.state_ptr[:-1])


@dataclass(eq=False)
class Solution:
    q: QTable
    values: np.ndarray
    policy: list[SeqId]
    stats: dict = field(default_factory=dict)

    def policy_actions(self, num_actions: int) -> list[list[int]]:
        return [p.decode(num_actions) for p in self.policy]


def extract_policy(q: QTable, available=None) -> list[SeqId]:
    """Greedy sequence per state; exact ties go to the smallest code."""
    if available is not None:
        q = _restrict_q(q, available)
    counts = np.diff(q.state_ptr)
    if np.any(counts == 0):
        raise NoActionsAvailable(int(np.argmax(counts == 0)))
    best = np.maximum.reduceat(q.values, q.state_ptr[:-1])
    hit = q.values == np.repeat(best, counts)
    # first hit within each state's segment; codes are ascending inside a segment
    first = np.empty(q.num_states, dtype=np.int64)
    hit_idx = np.flatnonzero(hit)
    seg = np.searchsorted(hit_idx, q.state_ptr[:-1])
    first[:] = hit_idx[seg]
    return [SeqId(q.length, int(q.codes[i])) for i in first]


def _restrict_q(q: QTable, available) -> QTable:
    per_state = _per_state(available, q.num_states, q.length, q.num_actions)
    keep = np.zeros(q.codes.size, dtype=bool)
    for s, codes in enumerate(per_state):
        lo, hi = q.state_ptr[s], q.state_ptr[s + 1]
        keep[lo:hi] = np.isin(q.codes[lo:hi], np.asarray(codes, dtype=np.int64))
    counts = np.add.reduceat(keep.astype(np.int64), q.state_ptr[:-1])
    counts[np.diff(q.state_ptr) == 0] = 0
    ptr = np.zeros(q.num_states + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return QTable(q.length, q.num_actions, ptr, q.codes[keep], q.values[keep])


def restrict_rows(composed: ComposedModel, available) -> ComposedModel:
    """Keep only the rows whose sequences are listed in ``available`` (per state or shared)."""
    per_state = _per_state(available, composed.num_states, composed.length,
                           composed.num_actions)
    keep = np.zeros(composed.num_rows, dtype=bool)
    for s, codes in enumerate(per_state):
        lo, hi = composed.state_ptr[s], composed.state_ptr[s + 1]
        want = np.asarray(codes, dtype=np.int64)
        present = np.isin(want, composed.codes[lo:hi])
        if not present.all():
            raise KeyError(f"state {s}: sequence code {int(want[~present][0])} not composed")
        keep[lo:hi] = np.isin(composed.codes[lo:hi], want)
    return composed.select(keep)


def value_iteration(composed: ComposedModel, available=None, gamma_step: float | None = None,
                    config: SolverConfig | None = None) -> Solution:
    """Solve ``Q(s,a) = R(s,a) + g * sum T(s'|s,a) max_a' Q(s',a')`` by Jacobi sweeps.

    ``gamma_step`` defaults to ``gamma ** composed.length``. Rows not listed in
    ``available`` are ignored. Raises NonConvergence when the sup-norm residual
    is still above ``config.tolerance`` after ``config.max_iterations`` sweeps.
    """
    config = config or SolverConfig()
    set_threads(config.threads)
    if available is not None:
        composed = restrict_rows(composed, available)
    counts = composed.per_state_counts()
    if np.any(counts == 0):
        raise NoActionsAvailable(int(np.argmax(counts == 0)))
    if gamma_step is None:
        gamma_step = composed.discount_used ** composed.length
    t0 = time.perf_counter()
    q, values, iters, residual, history = _kernels.value_iteration(
        composed.state_ptr, composed.indptr, composed.indices, composed.probs,
        composed.rewards, gamma_step, config.tolerance, config.max_iterations)
    elapsed = time.perf_counter() - t0
    if not residual <= config.tolerance:
        raise NonConvergence(float(residual), int(iters))
    table = QTable.from_composed(composed, q)
    stats = {
        "iterations": int(iters),
        "residual": float(residual),
        "seconds": elapsed,
        "composed_rows": composed.num_rows,
        "composed_entries": composed.nnz,
    }
    sol = Solution(q=table, values=np.asarray(values), policy=extract_policy(table), stats=stats)
    sol.residual_history = np.asarray(history)
    return sol


def solve_composite(model: PsoMdp, config: SolverConfig | None = None,
                    budget_bytes=None) -> Solution:
    """Naive solve: compose all ``|A|^k`` sequences, then value-iterate."""
    kw = {} if budget_bytes is None else {"budget_bytes": budget_bytes}
    t0 = time.perf_counter()
    composed = compose(model, model.checkin_period, **kw)
    t1 = time.perf_counter()
    sol = value_iteration(composed, config=config)
    sol.stats["formulate_seconds"] = t1 - t0
    sol.stats["solve_seconds"] = sol.stats["seconds"]
    return sol


# -------------------------------------------------------- check-in values


def _continuation(model: PsoMdp, values: np.ndarray, length: int) -> tuple[ComposedModel, np.ndarray]:
    """``R^{L} + gamma^L * T^L values`` for every length-L sequence."""
    composed = compose(model, length)
    q = _kernels.backup(composed.indptr, composed.indices, composed.probs, composed.rewards,
                        np.ascontiguousarray(values, dtype=float), model.discount**length)
    return composed, q


def unannounced_bonus_value(model: PsoMdp, u_star, tau: int) -> np.ndarray:
    """Value at a surprise check-in ``tau`` steps into the period.

    The agent re-plans the remaining ``k - tau`` steps with full knowledge of
    its state, then continues with the optimal values ``u_star``.
    """
    k = model.checkin_period
    if not 0 <= tau < k:
        raise ValidationError(f"tau must lie in [0, {k}), got {tau}")
    composed, q = _continuation(model, u_star, k - tau)
    return np.maximum.reduceat(q, composed.state_ptr[:-1])


def announced_checkin_q(model: PsoMdp, q_star: QTable, tau: int) -> QTable:
    """Q-values of length-``tau`` prefixes when an extra check-in at ``tau`` is known in advance."""
    k = model.checkin_period
    if not 1 <= tau < k:
        raise ValidationError(f"tau must lie in [1, {k}), got {tau}")
    u_star = q_star.max_per_state()
    bonus = unannounced_bonus_value(model, u_star, tau)
    composed, q1 = _continuation(model, bonus, tau)
    return QTable.from_composed(composed, q1)


def tail_continuation_value(model: PsoMdp, u_star, tail: SeqId) -> np.ndarray:
    """Value at every state of executing ``tail`` and then continuing optimally."""
    composed = compose(model, tail.length, [tail])
    q = _kernels.backup(composed.indptr, composed.indices, composed.probs, composed.rewards,
                        np.ascontiguousarray(u_star, dtype=float), model.discount**tail.length)
    return q

"""Branch-and-bound over action prefixes.

Prefixes are lengthened one step at a time. At every stage each surviving
prefix gets an upper bound (recomputed when the prefix length divides ``k``,
inherited from the parent otherwise) and each state a lower bound from a
fixed-suffix policy. Prefixes whose upper bound falls strictly below the
state's lower bound are dropped. The final stage solves the composite MDP
over the surviving full-length sequences only.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._accel import set_threads
from .bounds import SuffixSpec, lower_bound_suffix, upper_bound_divisor
from .errors import InternalEmptyFrontier, ValidationError
from .model import DEFAULT_BUDGET_BYTES, ComposedModel, PsoMdp, compose, extend_all
from .solver import QTable, Solution, SolverConfig, value_iteration


@dataclass(frozen=True)
class BnbConfig:
    prune_margin: float = 1e-9
    solver: SolverConfig = field(default_factory=SolverConfig)
    suffix: SuffixSpec | None = None
    collect_stats: bool = True
    budget_bytes: int | None = DEFAULT_BUDGET_BYTES

    def __post_init__(self):
        if self.prune_margin < 0:
            raise ValidationError("prune_margin must be >= 0")


@dataclass(eq=False)
class PrefixFrontier:
    """Surviving prefixes per state, held as the composed rows for those prefixes."""

    composed: ComposedModel

    @property
    def current_length(self) -> int:
        return self.composed.length

    def codes(self, s: int) -> np.ndarray:
        return self.composed.codes_of(s)

    def per_state(self) -> list[np.ndarray]:
        return [self.codes(s) for s in range(self.composed.num_states)]

    def counts(self) -> np.ndarray:
        return self.composed.per_state_counts()


@dataclass
class BnbStats:
    stages: list = field(default_factory=list)
    pruned_fraction: float = 0.0
    total_seconds: float = 0.0
    formulate_seconds: float = 0.0
    solve_seconds: float = 0.0
    final_rows: int = 0
    composed_entries: int = 0

    def as_dict(self) -> dict:
        return {
            "stages": self.stages,
            "pruned_fraction": self.pruned_fraction,
            "total_seconds": self.total_seconds,
            "formulate_seconds": self.formulate_seconds,
            "solve_seconds": self.solve_seconds,
            "final_rows": self.final_rows,
            "composed_entries": self.composed_entries,
        }


def _vi_error(stats, gamma_step):
    # distance from the returned iterate to the fixed point of a gamma_step-contraction
    return stats["residual"] * gamma_step / (1.0 - gamma_step) if gamma_step < 1 else np.inf


def prune_frontier(frontier, upper, lower, epsilon: float):
    """Drop prefix ``p`` at state ``s`` iff ``upper(s, p) < lower(s) - epsilon``.

    ``frontier`` is a PrefixFrontier (or ComposedModel); ``upper`` is a QTable
    or an array aligned with the frontier rows. Returns the pruned frontier
    of the same type.
    """
    composed = frontier.composed if isinstance(frontier, PrefixFrontier) else frontier
    out = composed.select(_prune_mask(composed, upper, lower, epsilon))
    return PrefixFrontier(out) if isinstance(frontier, PrefixFrontier) else out


def _prune_mask(composed, upper, lower, epsilon):
    ub = upper.values if isinstance(upper, QTable) else np.asarray(upper, dtype=float)
    if ub.size != composed.num_rows:
        raise ValidationError("upper bound is not aligned with the frontier rows")
    keep = ub >= np.repeat(np.asarray(lower, dtype=float), composed.per_state_counts()) - epsilon
    survivors = np.add.reduceat(keep.astype(np.int64), composed.state_ptr[:-1])
    if np.any(survivors == 0):
        s = int(np.argmax(survivors == 0))
        raise InternalEmptyFrontier(f"every prefix at state {s} was pruned")
    return keep


def solve_bnb(model: PsoMdp, config: BnbConfig | None = None) -> tuple[Solution, BnbStats]:
    config = config or BnbConfig()
    set_threads(config.solver.threads)
    k, A, S = model.checkin_period, model.num_actions, model.num_states
    g = model.discount
    suffix = config.suffix or SuffixSpec.default_for(model)
    stats = BnbStats()
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    frontier = compose(model, 1, budget_bytes=config.budget_bytes)
    stats.formulate_seconds += time.perf_counter() - t0
    stats.composed_entries += frontier.nnz
    parent_ub = None
    prev_lower = None

    # the length-k stage is the final solve itself, so bounds stop at k-1
    for tau in range(1, k):
        if tau > 1:
            t0 = time.perf_counter()
            parents = frontier
            frontier = extend_all(parents, model, config.budget_bytes)
            stats.formulate_seconds += time.perf_counter() - t0
            stats.composed_entries += frontier.nnz
        stage = {"tau": tau, "candidates": frontier.num_rows}

        t0 = time.perf_counter()
        if k % tau == 0:
            ub, ub_stats = upper_bound_divisor(
                model, tau, config.solver,
                prefix_restriction=[frontier.codes_of(s) for s in range(S)],
                return_stats=True)
            upper = ub.values
            ub_err = _vi_error(ub_stats, g**tau)
            stage["upper"] = "solved"
        else:
            # children inherit the parent's bound; rows are ordered (action, parent)
            upper = np.empty(frontier.num_rows)
            for s in range(S):
                lo, hi = parents.state_ptr[s], parents.state_ptr[s + 1]
                flo, fhi = frontier.state_ptr[s], frontier.state_ptr[s + 1]
                upper[flo:fhi] = np.tile(parent_ub[lo:hi], A)
            stage["upper"] = "inherited"
        t_ub = time.perf_counter() - t0

        t0 = time.perf_counter()
        _, lower, lb_stats = lower_bound_suffix(model, tau, suffix, config.solver,
                                                prefix_model=frontier, return_stats=True)
        lb_err = _vi_error(lb_stats, g**k)
        t_lb = time.perf_counter() - t0
        stats.solve_seconds += t_ub + t_lb

        if prev_lower is not None and suffix.kind == "nop":
            stage["lower_monotone"] = bool(np.all(lower >= prev_lower - 1e-8))
        prev_lower = lower

        margin = config.prune_margin + ub_err + lb_err
        before = frontier.num_rows
        keep = _prune_mask(frontier, upper, lower, margin)
        parent_ub = upper[keep]
        frontier = frontier.select(keep)
        stage.update({
            "survivors": frontier.num_rows,
            "pruned": before - frontier.num_rows,
            "upper_seconds": t_ub,
            "lower_seconds": t_lb,
            "margin": margin,
        })
        stats.stages.append(stage)

    if k > 1:
        t0 = time.perf_counter()
        frontier = extend_all(frontier, model, config.budget_bytes)
        stats.formulate_seconds += time.perf_counter() - t0
        stats.composed_entries += frontier.nnz

    sol = value_iteration(frontier, gamma_step=g**k, config=config.solver)
    stats.solve_seconds += sol.stats["seconds"]
    stats.final_rows = frontier.num_rows
    stats.pruned_fraction = 1.0 - frontier.num_rows / (S * A**k)
    stats.total_seconds = time.perf_counter() - t_start
    sol.stats.update({
        "method": "bnb",
        "pruned_fraction": stats.pruned_fraction,
        "formulate_seconds": stats.formulate_seconds,
        "solve_seconds": stats.solve_seconds,
        "total_seconds": stats.total_seconds,
        "composed_entries": stats.composed_entries,
    })
    return sol, stats

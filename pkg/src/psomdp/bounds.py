"""Upper bounds from extra check-ins and lower bounds from fixed action suffixes.

Offsets are counted as steps remaining until the next regular check-in.
Offset 0 is a regular check-in, where a full period of ``k`` steps lies ahead.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NonComposableB, NonConvergence, NopUnavailable, NotADivisor, ValidationError
from .model import ComposedModel, PsoMdp, compose, extend_by_actions, nop_padded
from .solver import QTable, SolverConfig, restrict_rows, value_iteration


# ------------------------------------------------------------ check-in sets


def _multiset_sums(members, limit):
    """Totals in [0, limit] reachable as sums of members, repetition allowed."""
    ok = np.zeros(limit + 1, dtype=bool)
    ok[0] = True
    for total in range(1, limit + 1):
        ok[total] = any(ell <= total and ok[total - ell] for ell in members)
    return ok


def check_composable(B, k: int) -> tuple[bool, frozenset]:
    """Whether every stride in ``B`` can be completed to ``k`` by other strides of ``B``.

    Also returns the offsets reachable from a regular check-in by taking
    strides from ``B`` (0 stands for the regular check-in itself).
    """
    members = sorted(set(int(b) for b in B))
    if not members or members[0] < 1 or members[-1] > k - 1:
        return False, frozenset()
    sums = _multiset_sums(members, k)
    composable = all(sums[k - ell] for ell in members)
    reach = {0}
    frontier = [k]
    seen = {k}
    while frontier:
        r = frontier.pop()
        for ell in members:
            nxt = r - ell
            if nxt > 0 and nxt not in seen:
                seen.add(nxt)
                reach.add(nxt)
                frontier.append(nxt)
    return composable, frozenset(reach)


@dataclass(frozen=True)
class CheckinSet:
    members: frozenset
    period: int
    offsets: frozenset = field(init=False)

    def __post_init__(self):
        members = frozenset(int(b) for b in self.members)
        object.__setattr__(self, "members", members)
        bad = [b for b in members if not 1 <= b <= self.period - 1]
        if not members or bad:
            raise ValidationError(
                f"check-in strides must lie in [1, {self.period - 1}], got {sorted(members)}")
        ok, offsets = check_composable(members, self.period)
        if not ok:
            sums = _multiset_sums(sorted(members), self.period)
            failing = min(b for b in members if not sums[self.period - b])
            raise NonComposableB(failing, members, self.period)
        object.__setattr__(self, "offsets", offsets)

    def live_offsets(self) -> list[int]:
        """Reachable offsets from which the regular check-in can be hit exactly."""
        sums = _multiset_sums(sorted(self.members), self.period)
        return sorted(m for m in self.offsets if m == 0 or sums[m])


@dataclass(eq=False)
class BoundFamily:
    """Per-offset upper-bound tables; ``tables[0]`` is keyed at regular check-ins."""

    tables: dict
    members: frozenset
    period: int
    stats: dict = field(default_factory=dict)

    @property
    def start(self) -> QTable:
        return self.tables[0]

    def state_values(self, offset: int = 0) -> np.ndarray:
        return self.tables[offset].max_per_state()


@dataclass(frozen=True)
class SuffixSpec:
    """Fixed action suffix for lower bounds: ``nop``, ``action`` (repeat) or ``explicit``."""

    kind: str = "nop"
    action: int | None = None
    actions: tuple = ()

    @classmethod
    def nop(cls):
        return cls("nop")

    @classmethod
    def repeat(cls, action: int):
        return cls("action", action=int(action))

    @classmethod
    def explicit(cls, actions):
        return cls("explicit", actions=tuple(int(a) for a in actions))

    @classmethod
    def default_for(cls, model: PsoMdp):
        return cls.nop() if model.nop_action is not None else cls.repeat(0)

    @classmethod
    def parse(cls, text: str):
        """``nop``, ``action:<i>`` or ``seq:<a,b,...>``."""
        if text == "nop":
            return cls.nop()
        kind, _, arg = text.partition(":")
        if kind == "action" and arg:
            return cls.repeat(int(arg))
        if kind == "seq":
            return cls.explicit([int(x) for x in arg.split(",") if x.strip()])
        raise ValidationError(f"unrecognized suffix {text!r}")

    def resolve(self, model: PsoMdp, tau: int) -> list[int]:
        n = model.checkin_period - tau
        if self.kind == "nop":
            if model.nop_action is None:
                raise NopUnavailable("NopUnavailable: model declares no NOP action")
            return [model.nop_action] * n
        if self.kind == "action":
            if not 0 <= self.action < model.num_actions:
                raise ValidationError(f"suffix action {self.action} out of range")
            return [self.action] * n
        if self.kind == "explicit":
            if len(self.actions) != n:
                raise ValidationError(f"explicit suffix has length {len(self.actions)}, need {n}")
            if any(not 0 <= a < model.num_actions for a in self.actions):
                raise ValidationError("explicit suffix action out of range")
            return list(self.actions)
        raise ValidationError(f"unknown suffix kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "nop":
            return "nop"
        if self.kind == "action":
            return f"action:{self.action}"
        return "seq:" + ",".join(map(str, self.actions))


# ------------------------------------------------------------ upper bounds


def _full_index(num_actions, ell, state_ptr, codes):
    """Row of each ``(state, code mod A^ell)`` inside a full length-ell composition."""
    states = np.repeat(np.arange(state_ptr.size - 1), np.diff(state_ptr))
    width = num_actions**ell
    return states * width + codes % width


def _solve_offsets(model: PsoMdp, members, config: SolverConfig, restriction=None,
                   live=None):
    """Coupled value iteration over the offset family for strides ``members``.

    ``restriction`` (per-state codes) limits the keys of the regular
    check-in table, and therefore the maxima taken at regular check-ins.
    """
    k, A, S = model.checkin_period, model.num_actions, model.num_states
    members = sorted(members)
    if live is None:
        sums = _multiset_sums(members, k)
        live = sorted({m for m in range(k) if m == 0 or sums[m]})
    remaining = {m: (k if m == 0 else m) for m in live}
    comps = {ell: compose(model, ell) for ell in members}

    tables = {}
    for m in live:
        r = remaining[m]
        terms = []
        for ell in members:
            nxt = r - ell
            if ell <= r and (nxt == 0 or nxt in remaining):
                terms.append((ell, 0 if nxt == 0 else nxt))
        if not terms:
            continue
        L = max(ell for ell, _ in terms)
        if m == 0 and restriction is not None:
            codes = [np.unique(np.asarray(c, dtype=np.int64)) for c in restriction]
            ptr = np.zeros(S + 1, dtype=np.int64)
            np.cumsum([c.size for c in codes], out=ptr[1:])
            flat = np.concatenate(codes) if codes else np.zeros(0, np.int64)
        else:
            ptr = np.arange(S + 1, dtype=np.int64) * A**L
            flat = np.tile(np.arange(A**L, dtype=np.int64), S)
        if np.any(np.diff(ptr) == 0):
            raise ValidationError("every state needs at least one admissible prefix")
        idx = {ell: _full_index(A, ell, ptr, flat) for ell, _ in terms}
        tables[m] = (L, ptr, flat, terms, idx)
    # offsets whose every stride leads to a dead end drop out; repeat until stable
    while True:
        dead = [m for m, (_, _, _, terms, _) in tables.items()
                if any(t != 0 and t not in tables for _, t in terms)]
        if not dead:
            break
        for m in dead:
            L, ptr, flat, terms, idx = tables[m]
            terms = [(ell, t) for ell, t in terms if t == 0 or t in tables]
            if not terms:
                del tables[m]
            else:
                tables[m] = (L, ptr, flat, terms, idx)

    q = {m: np.zeros(t[2].size) for m, t in tables.items()}
    v = {m: np.zeros(S) for m in tables}
    residual, it = np.inf, 0
    t0 = time.perf_counter()
    while it < config.max_iterations:
        cache = {}
        new_q = {}
        for m, (L, ptr, flat, terms, idx) in tables.items():
            best = np.full(flat.size, np.inf)
            for ell, tgt in terms:
                key = (ell, tgt)
                if key not in cache:
                    c = comps[ell]
                    cache[key] = _kernels.backup(c.indptr, c.indices, c.probs, c.rewards,
                                                 v[tgt], model.discount**ell)
                np.minimum(best, cache[key][idx[ell]], out=best)
            new_q[m] = best
        residual = max(float(np.max(np.abs(new_q[m] - q[m]))) for m in tables)
        q = new_q
        v = {m: np.maximum.reduceat(q[m], tables[m][1][:-1]) for m in tables}
        it += 1
        if residual <= config.tolerance:
            break
    if not residual <= config.tolerance:
        raise NonConvergence(residual, it)
    out = {m: QTable(L, A, ptr, flat, q[m]) for m, (L, ptr, flat, _, _) in tables.items()}
    stats = {"iterations": it, "residual": residual, "seconds": time.perf_counter() - t0,
             "offsets": sorted(out)}
    return out, stats


def upper_bound_general(model: PsoMdp, B, config: SolverConfig | None = None,
                        prefix_restriction=None) -> BoundFamily:
    """Upper bounds from periodic extra check-ins at strides in ``B``.

    Each table takes, per key, the minimum over admissible strides of the
    prefix reward plus the discounted best continuation at the next check-in.
    """
    config = config or SolverConfig()
    cs = B if isinstance(B, CheckinSet) else CheckinSet(frozenset(B), model.checkin_period)
    if cs.period != model.checkin_period:
        raise ValidationError("check-in set period does not match the model")
    tables, stats = _solve_offsets(model, cs.members, config, prefix_restriction,
                                   live=cs.live_offsets())
    return BoundFamily(tables, cs.members, cs.period, stats)


def upper_bound_divisor(model: PsoMdp, ell: int, config: SolverConfig | None = None,
                        prefix_restriction=None, return_stats: bool = False):
    """Upper bound with extra check-ins every ``ell`` steps, ``ell`` dividing ``k``.

    Unrestricted, every offset poses the same problem, so one MDP with
    ``|A|^ell`` actions is solved. With ``prefix_restriction`` only the
    choices made at regular check-ins are limited; mid-period segments stay
    free, which keeps the bound admissible.
    """
    config = config or SolverConfig()
    k = model.checkin_period
    if ell < 1 or k % ell:
        raise NotADivisor(f"NotADivisor: {ell} does not divide k={k}")
    if prefix_restriction is None:
        composed = compose(model, ell)
        sol = value_iteration(composed, gamma_step=model.discount**ell, config=config)
        q, stats = sol.q, sol.stats
    else:
        tables, stats = _solve_offsets(model, [ell], config, prefix_restriction,
                                       live=list(range(0, k, ell)))
        q = tables[0]
    return (q, stats) if return_stats else q


def omniscient_values(model: PsoMdp, config: SolverConfig | None = None) -> np.ndarray:
    """State values when the state is observed at every step."""
    return upper_bound_divisor(model, 1, config).max_per_state()


# ------------------------------------------------------------ lower bounds


def _suffix_composed(model: PsoMdp, prefix: ComposedModel, suffix: SuffixSpec,
                     shortcut: bool) -> ComposedModel:
    k, tau = model.checkin_period, prefix.length
    z = suffix.resolve(model, tau)
    if not z:
        return prefix
    if suffix.kind == "nop" and shortcut:
        return nop_padded(prefix, model, k)
    return extend_by_actions(prefix, model, z)


def lower_bound_suffix(model: PsoMdp, tau: int, suffix: SuffixSpec | None = None,
                       config: SolverConfig | None = None, prefix_restriction=None,
                       prefix_model: ComposedModel | None = None, shortcut: bool = True,
                       return_stats: bool = False):
    """Optimal values when every period ends with the fixed suffix.

    Returns ``(Q_lb, U_lb)`` where ``Q_lb`` is keyed by the length-``tau``
    prefixes. For a NOP suffix the prefix composition is reused as is.
    """
    config = config or SolverConfig()
    k = model.checkin_period
    if not 1 <= tau <= k:
        raise ValidationError(f"tau must lie in [1, {k}], got {tau}")
    suffix = suffix or SuffixSpec.default_for(model)
    suffix.resolve(model, tau)
    if prefix_model is None:
        prefix_model = compose(model, tau)
        if prefix_restriction is not None:
            prefix_model = restrict_rows(prefix_model, prefix_restriction)
    elif prefix_model.length != tau:
        raise ValidationError("prefix_model length does not match tau")
    full = _suffix_composed(model, prefix_model, suffix, shortcut)
    sol = value_iteration(full, gamma_step=model.discount**k, config=config)
    q = QTable.from_composed(prefix_model, sol.q.values)
    if return_stats:
        return q, sol.values, sol.stats
    return q, sol.values

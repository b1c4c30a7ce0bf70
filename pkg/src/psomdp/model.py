"""PSO-MDP data model, action-sequence encoding and transition/reward composition.

Transitions of the base model are stored as a CSR matrix over rows
``s * num_actions + a``; composed models use one CSR row per
``(state, sequence)`` pair, grouped by state and sorted by sequence code.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from ._budget import check_budget, composed_bytes
from .errors import (
    BadDiscount,
    BadIndex,
    BadNop,
    IndexOutOfRange,
    MissingPrefix,
    NonStochasticRow,
    ParseError,
    ValidationError,
)

ROW_SUM_TOL = 1e-9
DROP_TOL = 1e-15
DEFAULT_BUDGET_BYTES = 2 * 2**30


@dataclass(frozen=True, eq=False)
class PsoMdp:
    """A validated PSO-MDP ``<S, A, T, R, k>`` with discount and optional NOP."""

    num_states: int
    num_actions: int
    indptr: np.ndarray
    indices: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    checkin_period: int
    discount: float
    nop_action: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.probs, self.rewards):
            arr.setflags(write=False)

    @property
    def k(self) -> int:
        return self.checkin_period

    @property
    def gamma(self) -> float:
        return self.discount

    def successors(self, s: int, a: int) -> list[tuple[int, float]]:
        r = s * self.num_actions + a
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.probs[lo:hi].tolist()))

    def dense_transitions(self) -> np.ndarray:
        """``T[s, a, s']`` as a dense array."""
        S, A = self.num_states, self.num_actions
        out = np.zeros((S * A, S))
        rows = np.repeat(np.arange(S * A), np.diff(self.indptr))
        out[rows, self.indices] = self.probs
        return out.reshape(S, A, S)

    def replace(self, *, checkin_period=None, discount=None) -> "PsoMdp":
        """Copy with a different check-in period and/or discount (re-validated)."""
        raw = self.to_dict()
        if checkin_period is not None:
            raw["checkin_period"] = int(checkin_period)
        if discount is not None:
            raw["gamma"] = float(discount)
        return validate(raw, meta=dict(self.meta))

    def to_dict(self) -> dict:
        S, A = self.num_states, self.num_actions
        transitions = [[self.successors(s, a) for a in range(A)] for s in range(S)]
        return {
            "num_states": S,
            "num_actions": A,
            "gamma": self.discount,
            "checkin_period": self.checkin_period,
            "nop_action": self.nop_action,
            "transitions": [[[[sp, p] for sp, p in row] for row in st] for st in transitions],
            "rewards": self.rewards.tolist(),
        }

    def model_hash(self, include_params: bool = True) -> str:
        d = self.to_dict()
        if not include_params:
            d.pop("gamma")
            d.pop("checkin_period")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _is_number(x):
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def validate(raw, meta: dict | None = None) -> PsoMdp:
    """Validate PsoMdp-shaped data (the model JSON layout) into a PsoMdp.

    ``raw`` is a mapping with keys ``num_states``, ``num_actions``, ``gamma``,
    ``checkin_period``, ``nop_action``, ``transitions`` and ``rewards``.
    """
    if isinstance(raw, PsoMdp):
        return raw
    try:
        S = raw["num_states"]
        A = raw["num_actions"]
        gamma = raw["gamma"]
        k = raw["checkin_period"]
        transitions = raw["transitions"]
        rewards = raw["rewards"]
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}") from None
    nop = raw.get("nop_action")

    if not (isinstance(S, (int, np.integer)) and S >= 1):
        raise ValidationError(f"num_states must be a positive integer, got {S!r}")
    if not (isinstance(A, (int, np.integer)) and A >= 1):
        raise ValidationError(f"num_actions must be a positive integer, got {A!r}")
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ValidationError(f"checkin_period must be a positive integer, got {k!r}")
    if not _is_number(gamma) or not math.isfinite(gamma) or not 0.0 <= gamma < 1.0:
        raise BadDiscount(f"BadDiscount: gamma must lie in [0, 1), got {gamma!r}")
    if nop is not None and not (isinstance(nop, (int, np.integer)) and 0 <= nop < A):
        raise BadIndex(f"BadIndex: nop_action {nop!r} is not an action in [0, {A})")
    if len(transitions) != S or len(rewards) != S:
        raise ValidationError("transitions and rewards need one entry per state")

    indptr = np.zeros(S * A + 1, dtype=np.int64)
    idx_chunks, prob_chunks = [], []
    R = np.empty((S, A))
    for s in range(S):
        if len(transitions[s]) != A or len(rewards[s]) != A:
            raise ValidationError(f"state {s} needs exactly {A} actions")
        for a in range(A):
            r = rewards[s][a]
            if not _is_number(r):
                raise ParseError(f"rewards[{s}][{a}]: {r!r} is not a number")
            if not math.isfinite(r):
                raise ValidationError(f"reward R(s{s}, a{a}) must be a finite number")
            R[s, a] = r
            row = {}
            total = 0.0
            for entry in transitions[s][a]:
                sp, p = entry
                if not isinstance(sp, (int, np.integer)) or not 0 <= sp < S:
                    raise BadIndex(f"BadIndex: successor {sp!r} of (s{s}, a{a}) out of range")
                if not _is_number(p):
                    raise ParseError(f"transitions[{s}][{a}]: probability {p!r} is not a number")
                if not math.isfinite(p) or not 0.0 <= p <= 1.0:
                    raise NonStochasticRow(s, a, float(p))
                if sp in row:
                    raise BadIndex(f"BadIndex: duplicate successor {sp} in (s{s}, a{a})")
                row[sp] = float(p)
                total += p
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise NonStochasticRow(s, a, total)
            keys = sorted(t for t, p in row.items() if p > 0.0)
            idx_chunks.append(np.array(keys, dtype=np.int32))
            prob_chunks.append(np.array([row[t] for t in keys]))
            indptr[s * A + a + 1] = indptr[s * A + a] + len(keys)

    if nop is not None:
        for s in range(S):
            row = transitions[s][nop]
            stay = sum(p for sp, p in row if sp == s)
            if abs(stay - 1.0) > ROW_SUM_TOL:
                moved = [sp for sp, p in row if sp != s and p > 0]
                raise BadNop(s, f"leaks to {moved}" if moved else "")
            if R[s, nop] != 0.0:
                raise BadNop(s, f"reward {R[s, nop]}")

    return PsoMdp(
        num_states=int(S),
        num_actions=int(A),
        indptr=indptr,
        indices=np.concatenate(idx_chunks) if idx_chunks else np.zeros(0, np.int32),
        probs=np.concatenate(prob_chunks) if prob_chunks else np.zeros(0),
        rewards=R,
        checkin_period=int(k),
        discount=float(gamma),
        nop_action=None if nop is None else int(nop),
        meta=dict(meta or {}),
    )


# ---------------------------------------------------------------- sequences


@dataclass(frozen=True, order=True)
class SeqId:
    """Length-tagged action sequence; ``a_0`` is the least-significant base-|A| digit."""

    length: int
    code: int

    def decode(self, num_actions: int) -> list[int]:
        return decode_code(self.code, self.length, num_actions)

    def prefix(self, ell: int, num_actions: int) -> "SeqId":
        if not 0 <= ell <= self.length:
            raise IndexOutOfRange(f"prefix length {ell} outside [0, {self.length}]")
        return SeqId(ell, self.code % num_actions**ell)

    def suffix(self, start: int, num_actions: int) -> "SeqId":
        """The subsequence ``a_{start:length}``."""
        if not 0 <= start <= self.length:
            raise IndexOutOfRange(f"suffix start {start} outside [0, {self.length}]")
        return SeqId(self.length - start, self.code // num_actions**start)

    def extend(self, action: int, num_actions: int) -> "SeqId":
        if not 0 <= action < num_actions:
            raise IndexOutOfRange(f"action {action} outside [0, {num_actions})")
        return SeqId(self.length + 1, self.code + action * num_actions**self.length)

    def concat(self, other: "SeqId", num_actions: int) -> "SeqId":
        return SeqId(self.length + other.length,
                     self.code + other.code * num_actions**self.length)


def encode_seq(actions: Sequence[int], num_actions: int, max_length: int | None = None) -> SeqId:
    if max_length is not None and len(actions) > max_length:
        raise IndexOutOfRange(f"sequence length {len(actions)} exceeds {max_length}")
    code = 0
    for i, a in enumerate(actions):
        if not 0 <= int(a) < num_actions:
            raise IndexOutOfRange(f"action {a} at position {i} outside [0, {num_actions})")
        code += int(a) * num_actions**i
    return SeqId(len(actions), code)


def decode_code(code: int, length: int, num_actions: int) -> list[int]:
    out = []
    for _ in range(length):
        code, a = divmod(int(code), num_actions)
        out.append(a)
    return out


def _as_code(seq, length, num_actions):
    if isinstance(seq, SeqId):
        if seq.length != length:
            raise IndexOutOfRange(f"sequence {seq} does not have length {length}")
        return seq.code
    if isinstance(seq, (int, np.integer)):
        return int(seq)
    return encode_seq(list(seq), num_actions).code


# ------------------------------------------------------------- composition


@dataclass(frozen=True, eq=False)
class ComposedModel:
    """``T^tau`` and ``R^{tau,gamma}`` for a per-state set of length-tau sequences.

    Rows ``state_ptr[s]:state_ptr[s+1]`` belong to state ``s`` and are sorted
    by ``codes``.
    """

    length: int
    num_states: int
    num_actions: int
    state_ptr: np.ndarray
    codes: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    discount_used: float
    drop_tol: float = DROP_TOL

    @property
    def num_rows(self) -> int:
        return int(self.codes.size)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def nbytes(self) -> int:
        return composed_bytes(self.nnz, self.num_rows)

    def row_states(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_states), np.diff(self.state_ptr))

    def codes_of(self, s: int) -> np.ndarray:
        return self.codes[self.state_ptr[s]:self.state_ptr[s + 1]]

    def sequences(self, s: int) -> list[SeqId]:
        return [SeqId(self.length, int(c)) for c in self.codes_of(s)]

    def row_of(self, s: int, seq) -> int:
        code = _as_code(seq, self.length, self.num_actions)
        lo, hi = self.state_ptr[s], self.state_ptr[s + 1]
        i = lo + int(np.searchsorted(self.codes[lo:hi], code))
        if i >= hi or self.codes[i] != code:
            raise KeyError((s, SeqId(self.length, code)))
        return i

    def distribution(self, s: int, seq) -> dict[int, float]:
        i = self.row_of(s, seq)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return dict(zip(self.indices[lo:hi].tolist(), self.probs[lo:hi].tolist()))

    def reward(self, s: int, seq) -> float:
        return float(self.rewards[self.row_of(s, seq)])

    def per_state_counts(self) -> np.ndarray:
        return np.diff(self.state_ptr)

    def select(self, keep: np.ndarray) -> "ComposedModel":
        """Sub-model keeping the rows where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        rows = np.flatnonzero(keep)
        lens = np.diff(self.indptr)[rows]
        indptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        starts = self.indptr[rows]
        gather = np.repeat(starts - indptr[:-1], lens) + np.arange(indptr[-1])
        counts = np.add.reduceat(keep.astype(np.int64), self.state_ptr[:-1]) \
            if keep.size else np.zeros(self.num_states, np.int64)
        counts[np.diff(self.state_ptr) == 0] = 0
        state_ptr = np.zeros(self.num_states + 1, dtype=np.int64)
        np.cumsum(counts, out=state_ptr[1:])
        return ComposedModel(
            length=self.length,
            num_states=self.num_states,
            num_actions=self.num_actions,
            state_ptr=state_ptr,
            codes=self.codes[rows],
            indptr=indptr,
            indices=self.indices[gather],
            probs=self.probs[gather],
            rewards=self.rewards[rows],
            discount_used=self.discount_used,
            drop_tol=self.drop_tol,
        )

    def relabel(self, length: int, codes: np.ndarray) -> "ComposedModel":
        """Same rows under different sequence labels (used for NOP-padded suffixes)."""
        return ComposedModel(length, self.num_states, self.num_actions, self.state_ptr,
                             np.asarray(codes, dtype=np.int64), self.indptr, self.indices,
                             self.probs, self.rewards, self.discount_used, self.drop_tol)


def _base_arrays(model: PsoMdp):
    return (model.indptr, model.indices, model.probs,
            np.ascontiguousarray(model.rewards.reshape(-1)))


def _first_level(model: PsoMdp, per_state_codes) -> ComposedModel:
    """Length-1 composition; rows are copied verbatim from the base model."""
    S, A = model.num_states, model.num_actions
    if per_state_codes is None:
        codes = np.tile(np.arange(A, dtype=np.int64), S)
        base_rows = np.arange(S * A)
        state_ptr = np.arange(S + 1, dtype=np.int64) * A
    else:
        base_rows, codes_l = [], []
        state_ptr = np.zeros(S + 1, dtype=np.int64)
        for s in range(S):
            cs = np.asarray(per_state_codes[s], dtype=np.int64)
            codes_l.append(cs)
            base_rows.append(s * A + cs)
            state_ptr[s + 1] = state_ptr[s] + cs.size
        codes = np.concatenate(codes_l)
        base_rows = np.concatenate(base_rows)
    lens = np.diff(model.indptr)[base_rows]
    indptr = np.zeros(base_rows.size + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr[1:])
    gather = np.repeat(model.indptr[base_rows] - indptr[:-1], lens) + np.arange(indptr[-1])
    return ComposedModel(
        length=1, num_states=S, num_actions=A, state_ptr=state_ptr, codes=codes,
        indptr=indptr, indices=model.indices[gather].astype(np.int32),
        probs=model.probs[gather].astype(np.float64),
        rewards=model.rewards.reshape(-1)[base_rows].astype(np.float64),
        discount_used=model.discount)


def _extend_rows(prev: ComposedModel, model: PsoMdp, parent_rows, actions, state_ptr,
                 codes, budget_bytes) -> ComposedModel:
    check_budget(0, len(parent_rows), budget_bytes)
    indptr, indices, probs, rewards = _kernels.extend_rows(
        prev.indptr, prev.indices, prev.probs, prev.rewards, parent_rows, actions,
        *_base_arrays(model), model.num_states, model.num_actions,
        model.discount ** prev.length, DROP_TOL, budget_bytes)
    return ComposedModel(
        length=prev.length + 1, num_states=model.num_states,
        num_actions=model.num_actions, state_ptr=state_ptr, codes=codes,
        indptr=indptr, indices=indices, probs=probs, rewards=rewards,
        discount_used=model.discount)


def extend_all(prev: ComposedModel, model: PsoMdp,
               budget_bytes: int | None = DEFAULT_BUDGET_BYTES) -> ComposedModel:
    """Extend every row of ``prev`` by every atomic action."""
    A = model.num_actions
    base = A ** prev.length
    counts = prev.per_state_counts()
    parents, actions, codes = [], [], []
    for s in range(prev.num_states):
        rows = np.arange(prev.state_ptr[s], prev.state_ptr[s + 1])
        parents.append(np.tile(rows, A))
        acts = np.repeat(np.arange(A, dtype=np.int64), rows.size)
        actions.append(acts)
        codes.append(np.tile(prev.codes[rows], A) + acts * base)
    state_ptr = np.zeros(prev.num_states + 1, dtype=np.int64)
    np.cumsum(counts * A, out=state_ptr[1:])
    return _extend_rows(prev, model, np.concatenate(parents), np.concatenate(actions),
                        state_ptr, np.concatenate(codes), budget_bytes)


def extend_by_actions(prev: ComposedModel, model: PsoMdp, actions: Sequence[int],
                      budget_bytes: int | None = DEFAULT_BUDGET_BYTES) -> ComposedModel:
    """Append the fixed action list ``actions`` to every row of ``prev``."""
    A = model.num_actions
    out = prev
    for a in actions:
        if not 0 <= a < A:
            raise IndexOutOfRange(f"action {a} outside [0, {A})")
        rows = np.arange(out.num_rows)
        out = _extend_rows(out, model, rows, np.full(rows.size, a, dtype=np.int64),
                           out.state_ptr.copy(), out.codes + a * A ** out.length,
                           budget_bytes)
    return out


def extend_composition(prev: ComposedModel, model: PsoMdp, allowed_extensions,
                       budget_bytes: int | None = DEFAULT_BUDGET_BYTES) -> ComposedModel:
    """Compose length-tau sequences from their already-composed (tau-1)-prefixes.

    ``allowed_extensions`` is either one iterable of sequences applied to every
    state, or a list with one iterable per state. Sequences may be SeqIds,
    integer codes or action lists.
    """
    S, A = model.num_states, model.num_actions
    tau = prev.length + 1
    per_state = _per_state(allowed_extensions, S, tau, A)
    base = A ** prev.length
    parents, actions, codes = [], [], []
    state_ptr = np.zeros(S + 1, dtype=np.int64)
    for s in range(S):
        cs = np.unique(np.asarray(per_state[s], dtype=np.int64))
        pcodes = cs % base
        lo, hi = prev.state_ptr[s], prev.state_ptr[s + 1]
        pos = lo + np.searchsorted(prev.codes[lo:hi], pcodes)
        bad = (pos >= hi) | (prev.codes[np.minimum(pos, max(hi - 1, 0))] != pcodes) \
            if cs.size else np.zeros(0, bool)
        if hi == lo and cs.size:
            bad = np.ones(cs.size, bool)
        if bad.any():
            missing = SeqId(prev.length, int(pcodes[np.argmax(bad)]))
            raise MissingPrefix(f"MissingPrefix: state {s} has no composed prefix {missing}")
        parents.append(pos)
        actions.append(cs // base)
        codes.append(cs)
        state_ptr[s + 1] = state_ptr[s] + cs.size
    return _extend_rows(prev, model, np.concatenate(parents), np.concatenate(actions),
                        state_ptr, np.concatenate(codes), budget_bytes)


def _per_state(sequences, S, length, A):
    """Normalize a shared or per-state sequence collection to per-state code lists.

    The per-state form is a list of ``S`` collections; the shared form is a flat
    collection of SeqIds or integer codes.
    """
    seqs = list(sequences)
    if len(seqs) == S and all(not isinstance(x, (SeqId, int, np.integer)) for x in seqs):
        return [[_as_code(q, length, A) for q in group] for group in seqs]
    return [[_as_code(q, length, A) for q in seqs]] * S


def compose(model: PsoMdp, tau: int, sequence_set: Iterable | None = None,
            budget_bytes: int | None = DEFAULT_BUDGET_BYTES) -> ComposedModel:
    """``T^tau`` and ``R^{tau,gamma}`` for every state and the requested sequences.

    Without ``sequence_set`` all ``|A|^tau`` sequences are composed. The
    computation always proceeds by one-step extensions of the prefix closure,
    in ascending intermediate-state order, so it is bit-identical to a chain
    of :func:`extend_composition` calls over the same sets.
    """
    if not 1 <= tau:
        raise IndexOutOfRange(f"tau must be >= 1, got {tau}")
    A = model.num_actions
    if sequence_set is None:
        check_budget(0, model.num_states * A**tau, budget_bytes)
        out = _first_level(model, None)
        for _ in range(1, tau):
            out = extend_all(out, model, budget_bytes)
        return out
    codes = sorted({_as_code(q, tau, A) for q in sequence_set})
    if any(not 0 <= c < A**tau for c in codes):
        raise IndexOutOfRange(f"sequence code out of range for length {tau}")
    levels = [sorted({c % A**ell for c in codes}) for ell in range(1, tau + 1)]
    out = _first_level(model, [levels[0]] * model.num_states)
    for ell in range(2, tau + 1):
        out = extend_composition(out, model, levels[ell - 1], budget_bytes)
    return out


def nop_padded(composed: ComposedModel, model: PsoMdp, total_length: int) -> ComposedModel:
    """Relabel ``p`` as ``p`` followed by NOPs up to ``total_length``.

    For a non-drift NOP, ``T^k(p.z) = T^tau(p)`` and ``R^{k}(p.z) = R^{tau}(p)``.
    """
    if model.nop_action is None:
        from .errors import NopUnavailable

        raise NopUnavailable("model has no NOP action")
    A, tau = model.num_actions, composed.length
    z = sum(model.nop_action * A**i for i in range(total_length - tau))
    return composed.relabel(total_length, composed.codes + z * A**tau)

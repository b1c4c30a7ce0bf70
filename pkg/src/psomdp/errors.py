"""Exception hierarchy for psomdp."""


class PsoMdpError(Exception):
    """Base class for all library errors."""


class ValidationError(PsoMdpError):
    """Raised when a model or spec fails validation."""


class NonStochasticRow(ValidationError):
    def __init__(self, state, action, total):
        self.state, self.action, self.total = state, action, total
        super().__init__(
            f"NonStochasticRow(s{state}, a{action}, {total:.12g}): probabilities must sum to 1"
        )


class BadIndex(ValidationError):
    pass


class BadNop(ValidationError):
    def __init__(self, state, detail=""):
        self.state = state
        msg = f"BadNop(s{state}): NOP must keep the state with probability one and zero reward"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BadDiscount(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class UnknownBuiltin(ValidationError):
    pass


class MissingPrefix(PsoMdpError):
    pass


class CapacityExceeded(PsoMdpError):
    def __init__(self, needed_bytes, budget_bytes, what="composition"):
        self.needed_bytes, self.budget_bytes = needed_bytes, budget_bytes
        super().__init__(
            f"CapacityExceeded: {what} needs ~{needed_bytes / 2**20:.1f} MiB, "
            f"budget is {budget_bytes / 2**20:.1f} MiB"
        )


class NonConvergence(PsoMdpError):
    def __init__(self, residual, iterations):
        self.residual, self.iterations = residual, iterations
        super().__init__(
            f"NonConvergence: residual {residual:.3e} after {iterations} iterations"
        )


class NoActionsAvailable(PsoMdpError):
    def __init__(self, state):
        self.state = state
        super().__init__(f"NoActionsAvailable(s{state})")


class NonComposableB(PsoMdpError):
    def __init__(self, ell, members, k):
        self.ell = ell
        super().__init__(
            f"NonComposableB({ell}): no sub-multiset of {sorted(members)} completes {ell} to k={k}"
        )


class NotADivisor(PsoMdpError):
    pass


class NopUnavailable(PsoMdpError):
    pass


class TooLarge(PsoMdpError):
    pass


class InternalEmptyFrontier(PsoMdpError):
    """Pruning removed every prefix at a state. Indicates a soundness bug."""

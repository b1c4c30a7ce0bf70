"""Exact solvers, bounds and branch-and-bound for periodically state-observed MDPs."""
from ._accel import backend_name
from .errors import *  # noqa: F401,F403
from .model import (
    ComposedModel,
    PsoMdp,
    SeqId,
    compose,
    decode_code,
    encode_seq,
    extend_composition,
    validate,
)

__version__ = "0.1.0"

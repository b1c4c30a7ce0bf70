from .errors import CapacityExceeded

ENTRY_BYTES = 12  # int32 successor index + float64 probability
ROW_BYTES = 24  # indptr + sequence code + reward


def composed_bytes(nnz, nrows):
    return nnz * ENTRY_BYTES + nrows * ROW_BYTES


def check_budget(nnz, nrows, budget_bytes):
    if budget_bytes is None:
        return
    need = composed_bytes(nnz, nrows)
    if need > budget_bytes:
        raise CapacityExceeded(need, budget_bytes)

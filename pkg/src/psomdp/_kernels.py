"""Dispatch to the numba kernels or the numpy fallback (see ``_accel``)."""
from . import _kernels_numpy
from ._accel import USE_NUMBA

if USE_NUMBA:
    from . import _kernels_numba as _impl
else:
    _impl = _kernels_numpy

extend_rows = _impl.extend_rows
backup = _impl.backup
value_iteration = _impl.value_iteration

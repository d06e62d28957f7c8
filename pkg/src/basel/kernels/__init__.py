"""Backend dispatch for the numeric hot kernels.

The numba-compiled backend is used when importable; set ``BASEL_NO_NUMBA=1``
to force the pure-NumPy fallback (useful for debugging and for the
``benchmarks/kernel_bench.py`` comparison).  The active backend name is
exposed as :data:`BACKEND`.
"""

import os

from . import numpy_backend as _numpy_backend

_disable = os.environ.get("BASEL_NO_NUMBA", "0").strip().lower() in {"1", "true", "yes", "on"}

if _disable:
    _impl = _numpy_backend
else:
    try:
        from . import numba_backend as _numba_backend
        _impl = _numba_backend
    except ImportError:  # numba not installed
        _impl = _numpy_backend

BACKEND = _impl.NAME

residuals_jacobians = _impl.residuals_jacobians
accumulate_blocks = _impl.accumulate_blocks
schur_reduce = _impl.schur_reduce
backsub_points = _impl.backsub_points
chol_lower = _impl.chol_lower
trisolve_lower = _impl.trisolve_lower

__all__ = [
    "BACKEND",
    "residuals_jacobians",
    "accumulate_blocks",
    "schur_reduce",
    "backsub_points",
    "chol_lower",
    "trisolve_lower",
]

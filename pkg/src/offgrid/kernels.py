"""Backend selection for the hot scoring loops.

The compiled extension is used when it was built; set ``OFFGRID_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("OFFGRID_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def scan_max(U, V):
    U = np.atleast_2d(U)
    return _impl.scan_max(_c128(U), _c128(np.atleast_2d(V)))


def row_energy(U, W):
    U = np.atleast_2d(U)
    return _impl.row_energy(_c128(U), _c128(np.broadcast_to(W, U.shape)))


def backends():
    """Available backend modules keyed by name (for benchmarks and tests)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out

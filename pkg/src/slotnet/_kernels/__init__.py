"""Hot-kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set SLOTNET_PURE_PYTHON=1 to force the fallback (used by the benchmark and
the backend-parity tests).
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("SLOTNET_PURE_PYTHON"):
    _core = None
else:
    try:
        from . import _core
    except ImportError:
        _core = None

BACKEND = "compiled" if _core is not None else "python"
_impl = _core if _core is not None else _fallback


def irwin_hall_histogram(bit_generator, n_draws, n_uniforms, kmax):
    return _impl.irwin_hall_histogram(bit_generator, int(n_draws), int(n_uniforms), int(kmax))


def irwin_hall_draws(bit_generator, count, n_uniforms):
    return _impl.irwin_hall_draws(bit_generator, int(count), int(n_uniforms))


def clenshaw_chebyshev(coeffs, x):
    """Chebyshev-series evaluation; accepts scalars or arrays of any shape."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    arr = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(arr.reshape(-1))
    out = np.asarray(_impl.clenshaw_chebyshev(coeffs, flat)).reshape(arr.shape)
    if arr.ndim == 0:
        return float(out)
    return out

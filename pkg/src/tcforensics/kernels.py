"""Backend selection for the per-series kernels.

The compiled extension is preferred; set ``TCFORENSICS_PURE_PYTHON=1`` to
force the pure-Python implementation (useful for benchmarking and for
platforms without a C compiler).
"""

import os

from . import _fallback

if os.environ.get("TCFORENSICS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

interarrival = _impl.interarrival
group_starts = _impl.group_starts
ols_slope = _impl.ols_slope
epsilon_fraction = _impl.epsilon_fraction
window_sigmas = _impl.window_sigmas
regularity = _impl.regularity

__all__ = [
    "BACKEND",
    "interarrival",
    "group_starts",
    "ols_slope",
    "epsilon_fraction",
    "window_sigmas",
    "regularity",
]

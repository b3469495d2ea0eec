"""Selects the compiled kernel core when it is importable.

Set ``ADSTRUCT_PURE_PYTHON=1`` to force the numpy fallback.  ``NAME`` tells
which implementation is live; both modules stay importable for benchmarks
and cross-checks.
"""

import os

from . import _fallback

fallback = _fallback
compiled = None

if os.environ.get("ADSTRUCT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _ccore as compiled
    except ImportError:  # extension not built
        compiled = None
    _impl = compiled if compiled is not None else _fallback

NAME = "compiled" if _impl is compiled and compiled is not None else "python"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
greedy_match = _impl.greedy_match
local_maxima = _impl.local_maxima
precision_sum = _impl.precision_sum

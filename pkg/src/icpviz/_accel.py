"""Backend switch for the compiled kernels.

Set ``ICPVIZ_DISABLE_NUMBA=1`` to force the numpy/scipy path. The numba path
is also skipped automatically when numba cannot be imported.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("ICPVIZ_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled via ICPVIZ_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


def default_backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"

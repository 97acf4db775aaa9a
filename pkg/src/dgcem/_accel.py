"""Optional numba acceleration.

Setting ``DGCEM_DISABLE_NUMBA=1`` (or having no numba installed) routes every
hot kernel through its pure-numpy twin.
"""

import os
from typing import Any, Callable

_DISABLED = os.environ.get("DGCEM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def _njit(*args: Any, **kwargs: Any) -> Callable:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED

njit = _njit


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

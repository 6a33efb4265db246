"""Kernel-path selection: numba JIT by default, pure numpy on request.

Every hot kernel in :mod:`clickseg.kernels` ships in two versions, a
numba-compiled one and a pure-numpy fallback. The numba path is used whenever
numba imports cleanly; set ``CLICKSEG_NO_NUMBA=1`` to force the numpy path
(useful for debugging and for the A/B benchmark in :mod:`clickseg.bench`).

The flag is read once at import time.
"""

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def numba_disabled_by_env() -> bool:
    return os.environ.get("CLICKSEG_NO_NUMBA", "").strip() not in ("", "0")


USE_NUMBA = HAVE_NUMBA and not numba_disabled_by_env()

"""Kernel backend selection.

The env var ``CEFL_BACKEND`` picks the implementation of the hot numeric
kernels: ``numba`` (default when numba imports cleanly) or ``numpy``.
Both backends expose the same functions; see ``_kernels_numpy`` for the
reference semantics.
"""

from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

_requested = os.environ.get("CEFL_BACKEND", "").strip().lower()

if _requested not in ("", "numpy", "numba"):
    raise RuntimeError(
        f"CEFL_BACKEND={_requested!r} not recognized; use 'numpy' or 'numba'"
    )

if _requested == "numpy":
    BACKEND = "numpy"
elif _requested == "numba":
    BACKEND = "numba"
else:
    try:
        import numba  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        log.warning("numba unavailable, falling back to numpy kernels")
        BACKEND = "numpy"

if BACKEND == "numba":
    from . import _kernels_numba as kernels
else:
    from . import _kernels_numpy as kernels


def backend_name() -> str:
    return BACKEND

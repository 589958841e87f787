"""Backend selection for the stepping core.

The compiled Cython extension is preferred when importable; the pure numpy
fallback has the same contract and bit-identical output.  Set
``SEMIMARKOV_BACKEND=python`` to force the fallback, ``=compiled`` to make a
missing extension an error.
"""

from __future__ import annotations

import os

from . import _core_py

_requested = os.environ.get("SEMIMARKOV_BACKEND", "").strip().lower()

if _requested in ("", "auto"):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _core_py
        BACKEND = "python"
elif _requested == "compiled":
    from . import _core as _impl

    BACKEND = "compiled"
elif _requested == "python":
    _impl = _core_py
    BACKEND = "python"
else:
    raise RuntimeError(f"SEMIMARKOV_BACKEND must be auto, compiled or python, got {_requested!r}")


def backend_name() -> str:
    return BACKEND


def simulate_cells(cdf, u, j0, k_max: int):
    """Flat transition cells for each replication; see ``_core_py``."""
    import numpy as np

    cdf = np.ascontiguousarray(cdf, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    j0 = np.ascontiguousarray(j0, dtype=np.int64)
    return _impl.simulate_cells(cdf, u, j0, int(k_max))

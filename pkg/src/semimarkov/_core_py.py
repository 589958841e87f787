"""Pure numpy stepping core; fallback when the compiled extension is absent.

Contract shared with ``_core``: cdf is the (S, C) per-state cumulative cell
mass with the last column pinned to 1, u the (R, n) uniform matrix, j0 the
(R,) start states.  Returns the (R, n) int64 flat cell indices.  The lookup
counts cdf entries <= u (searchsorted side="right"), so either backend
produces bit-identical output for the same uniforms.
"""

from __future__ import annotations

import numpy as np


def simulate_cells(cdf: np.ndarray, u: np.ndarray, j0: np.ndarray, k_max: int) -> np.ndarray:
    n_reps, n_steps = u.shape
    last = cdf.shape[1] - 1
    cells = np.empty((n_reps, n_steps), dtype=np.int64)
    j = j0.astype(np.int64, copy=True)
    for t in range(n_steps):
        c = (cdf[j] <= u[:, t : t + 1]).sum(axis=1)
        np.minimum(c, last, out=c)
        cells[:, t] = c
        j = c // k_max
    return cells

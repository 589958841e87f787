# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled stepping core.

Same contract as ``_core_py``: given per-state cumulative cell masses and a
pregenerated uniform matrix, emit the flat cell index of every transition.
The cell lookup counts cdf entries <= u, matching numpy's
``searchsorted(side="right")`` so both backends are bit-identical.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def simulate_cells(double[:, ::1] cdf, double[:, ::1] u, long[::1] j0, int k_max):
    cdef Py_ssize_t n_reps = u.shape[0]
    cdef Py_ssize_t n_steps = u.shape[1]
    cdef Py_ssize_t n_cells = cdf.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] cells = np.empty((n_reps, n_steps), dtype=np.int64)
    cdef long[:, ::1] out = cells
    cdef Py_ssize_t r, t, lo, hi, mid
    cdef long j
    cdef double uu
    for r in range(n_reps):
        j = j0[r]
        for t in range(n_steps):
            uu = u[r, t]
            lo = 0
            hi = n_cells
            while lo < hi:
                mid = (lo + hi) >> 1
                if cdf[j, mid] <= uu:
                    lo = mid + 1
                else:
                    hi = mid
            if lo >= n_cells:
                lo = n_cells - 1
            out[r, t] = lo
            j = lo // k_max
    return cells

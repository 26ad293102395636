# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Both kernels have pure-numpy twins in ``_fallback``; results must agree
(bit-exactly for the histogram, to rounding for Clenshaw).  The uniform
stream is drawn through the numpy bit-generator C interface so that the
compiled and fallback paths consume identical random sequences.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport llrint
from numpy.random cimport bitgen_t

cnp.import_array()


def irwin_hall_histogram(object bit_generator, long long n_draws, int n_uniforms, int kmax):
    """Histogram of |round(sum of n_uniforms centered uniforms)| over n_draws.

    counts[j] holds draws with |I| == j for j < kmax; counts[kmax] lumps
    everything at or beyond kmax.
    """
    cdef bitgen_t *rng
    capsule = bit_generator.capsule
    rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(kmax + 1, dtype=np.int64)
    cdef long long[::1] cv = counts
    cdef double s
    cdef long long i, a
    cdef int j
    with bit_generator.lock:
        for i in range(n_draws):
            s = 0.0
            for j in range(n_uniforms):
                s += rng.next_double(rng.state) - 0.5
            a = llrint(s)
            if a < 0:
                a = -a
            if a > kmax:
                a = kmax
            cv[a] += 1
    return counts


def irwin_hall_draws(object bit_generator, long long count, int n_uniforms):
    """Vector of rounded centered uniform sums (the mod-raise overflow integers)."""
    cdef bitgen_t *rng
    capsule = bit_generator.capsule
    rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(count, dtype=np.int64)
    cdef long long[::1] ov = out
    cdef double s
    cdef long long i
    cdef int j
    with bit_generator.lock:
        for i in range(count):
            s = 0.0
            for j in range(n_uniforms):
                s += rng.next_double(rng.state) - 0.5
            ov[i] = llrint(s)
    return out


def clenshaw_chebyshev(double[::1] coeffs, double[::1] x):
    """Clenshaw evaluation of a Chebyshev series at every point of x."""
    cdef Py_ssize_t n = x.shape[0], deg = coeffs.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double b1, b2, t, xi
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(n):
            xi = x[i]
            b1 = 0.0
            b2 = 0.0
            for k in range(deg, 0, -1):
                t = 2.0 * xi * b1 - b2 + coeffs[k]
                b2 = b1
                b1 = t
            ov[i] = xi * b1 - b2 + coeffs[0]
    return out

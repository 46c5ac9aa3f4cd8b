# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DTW accumulated-cost kernel (two-row dynamic programme, GIL released)."""
from libc.math cimport INFINITY
from cpython.mem cimport PyMem_RawMalloc, PyMem_RawFree


cdef double _cost(const double* t, Py_ssize_t n, const double* s, Py_ssize_t m,
                  Py_ssize_t band) noexcept nogil:
    # caller guarantees 1 <= m <= n and band < 0 or band >= n - m
    cdef double* prev = <double*> PyMem_RawMalloc((m + 1) * sizeof(double))
    cdef double* curr = <double*> PyMem_RawMalloc((m + 1) * sizeof(double))
    cdef double* tmp
    cdef Py_ssize_t i, j, lo, hi
    cdef double best, diff, ti, out
    if prev == NULL or curr == NULL:
        PyMem_RawFree(prev)
        PyMem_RawFree(curr)
        return -1.0
    prev[0] = 0.0
    for j in range(1, m + 1):
        prev[j] = INFINITY
    for i in range(1, n + 1):
        if band < 0:
            lo = 1
            hi = m
        else:
            lo = i - band if i - band > 1 else 1
            hi = i + band if i + band < m else m
        curr[lo - 1] = INFINITY
        if hi < m:
            curr[hi + 1] = INFINITY
        ti = t[i - 1]
        for j in range(lo, hi + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if curr[j - 1] < best:
                best = curr[j - 1]
            diff = ti - s[j - 1]
            curr[j] = diff * diff + best
        tmp = prev
        prev = curr
        curr = tmp
    out = prev[m]
    PyMem_RawFree(prev)
    PyMem_RawFree(curr)
    return out


def dtw_cost(const double[::1] t, const double[::1] s, Py_ssize_t band=-1):
    """Minimum accumulated squared-difference cost over all warping paths."""
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t m = s.shape[0]
    cdef double out
    if n >= m:
        with nogil:
            out = _cost(&t[0], n, &s[0], m, band)
    else:
        with nogil:
            out = _cost(&s[0], m, &t[0], n, band)
    if out == -1.0:
        raise MemoryError("dtw working buffer")
    return out

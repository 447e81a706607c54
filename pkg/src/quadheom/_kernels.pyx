# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels for the hierarchy propagators.

Row-parallel CSR products: each output row is reduced sequentially by the
thread that owns it, so results are bitwise identical for any thread count
(the deterministic-reduction contract of the propagator).
"""

import numpy as np

cimport openmp
from cython.parallel cimport prange


def set_num_threads(int n):
    """Set the OpenMP thread count used by the kernels."""
    if n > 0:
        openmp.omp_set_num_threads(n)


def get_max_threads():
    """Current OpenMP thread limit."""
    return openmp.omp_get_max_threads()


def csr_matvec(const int[::1] indptr, const int[::1] indices,
               const double complex[::1] data,
               const double complex[::1] x,
               double complex[::1] out):
    """out = A @ x for CSR (indptr, indices, data); row-parallel."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, j
    cdef double complex acc
    for i in prange(n, nogil=True, schedule='static'):
        acc = 0
        for j in range(indptr[i], indptr[i + 1]):
            acc = acc + data[j] * x[indices[j]]
        out[i] = acc


def csr_matmat(const int[::1] indptr, const int[::1] indices,
               const double complex[::1] data,
               const double complex[:, ::1] X,
               double complex[:, ::1] out):
    """out = A @ X for CSR A and C-contiguous dense X; row-parallel."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = X.shape[1]
    cdef Py_ssize_t i, j, k, c
    cdef double complex v
    for i in prange(n, nogil=True, schedule='static'):
        for c in range(m):
            out[i, c] = 0
        for j in range(indptr[i], indptr[i + 1]):
            v = data[j]
            k = indices[j]
            for c in range(m):
                out[i, c] = out[i, c] + v * X[k, c]

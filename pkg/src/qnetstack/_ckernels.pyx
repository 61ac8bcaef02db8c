# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the state-vector hot loops and the packet checksum.

Index tables (``offsets``, ``bases``) are built by ``qnetstack.kernels`` and
passed in, so this module contains only the inner loops.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def apply_indexed(const double complex[::1] psi, const double complex[:, ::1] u,
                  const long[::1] offsets, const long[::1] bases):
    cdef Py_ssize_t nb = bases.shape[0]
    cdef Py_ssize_t d = offsets.shape[0]
    cdef Py_ssize_t b, r, c
    cdef long base
    cdef double complex acc
    out_arr = np.empty(psi.shape[0], dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    buf_arr = np.empty(d, dtype=np.complex128)
    cdef double complex[::1] buf = buf_arr
    with nogil:
        for b in range(nb):
            base = bases[b]
            for c in range(d):
                buf[c] = psi[base + offsets[c]]
            for r in range(d):
                acc = 0
                for c in range(d):
                    acc = acc + u[r, c] * buf[c]
                out[base + offsets[r]] = acc
    return out_arr


def marginal_indexed(const double complex[::1] psi,
                     const long[::1] offsets, const long[::1] bases):
    cdef Py_ssize_t nb = bases.shape[0]
    cdef Py_ssize_t d = offsets.shape[0]
    cdef Py_ssize_t b, c
    cdef double complex z
    probs_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] probs = probs_arr
    with nogil:
        for b in range(nb):
            for c in range(d):
                z = psi[bases[b] + offsets[c]]
                probs[c] += z.real * z.real + z.imag * z.imag
    return probs_arr


def ones_complement_sum(data):
    cdef const unsigned char[::1] buf = bytes(data)
    cdef Py_ssize_t n = buf.shape[0]
    cdef Py_ssize_t i
    cdef unsigned long long total = 0
    for i in range(0, n - 1, 2):
        total += (<unsigned long long>buf[i] << 8) | buf[i + 1]
    if n % 2:
        total += <unsigned long long>buf[n - 1] << 8
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return <long>total

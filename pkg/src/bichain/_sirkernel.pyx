# cython: language_level=3
"""Compiled SIR double-precision fast path.

Same stratum-streaming algorithm as ``bichain._sirkernel_py``, unrolled into
C loops over flat per-stratum buffers. Exposes ``eoe_double`` only; the
materialized transition table always goes through the NumPy twin.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, lgamma, log

cnp.import_array()

IMPL = "compiled"


cdef inline double _binom_pmf_log(double lf_n, double lf_j, double lf_nj,
                                  double j, double nj,
                                  double log_p, double log_q) noexcept nogil:
    return exp(lf_n - lf_j - lf_nj + j * log_p + nj * log_q)


def eoe_double(int N, double e_beta, double e_gamma):
    """Expected end-of-epidemic times; ``result[m1, m3]`` with m2 derived."""
    if not (0.0 < e_beta <= 1.0):
        raise ValueError("e_beta must lie in (0, 1]")
    if not (0.0 < e_gamma < 1.0):
        raise ValueError("eoe needs e_gamma in (0, 1)")

    cdef cnp.ndarray[double, ndim=1] lf_arr = np.zeros(N + 1)
    cdef double[::1] lf = lf_arr
    cdef int i
    for i in range(1, N + 1):
        lf[i] = lf[i - 1] + log(<double> i)

    # Recovery pmf rows B(d; m2, 1-e_gamma), flattened; row m2 starts at
    # m2*(m2+1)/2 and has m2+1 entries.
    cdef double lgam = log(e_gamma)
    cdef double sg = -expm1(lgam)
    cdef double lsg = log(sg)
    cdef cnp.ndarray[double, ndim=1] grows_arr = np.zeros((N + 1) * (N + 2) // 2)
    cdef double[::1] grows = grows_arr
    cdef int m2, d
    cdef Py_ssize_t goff
    for m2 in range(N + 1):
        goff = m2 * (m2 + 1) // 2
        for d in range(m2 + 1):
            grows[goff + d] = _binom_pmf_log(lf[m2], lf[d], lf[m2 - d],
                                             d, m2 - d, lsg, lgam)

    # Two stratum buffers; stratum N is the largest.
    cdef Py_ssize_t cap = 0, pos
    for m2 in range(1, N + 1):
        cap += (N - m2 + 1) * (m2 + 1)
    cdef cnp.ndarray[double, ndim=1] buf_a = np.zeros(cap)
    cdef cnp.ndarray[double, ndim=1] buf_b = np.zeros(cap)
    cdef double[::1] prev = buf_a
    cdef double[::1] cur = buf_b
    cdef cnp.ndarray[cnp.int64_t, ndim=1] off_prev_arr = np.zeros(N + 2, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] off_cur_arr = np.zeros(N + 2, dtype=np.int64)
    cdef cnp.int64_t[::1] off_prev = off_prev_arr
    cdef cnp.int64_t[::1] off_cur = off_cur_arr

    cdef cnp.ndarray[double, ndim=2] kmat_arr = np.zeros((N + 1, N + 1))
    cdef double[:, ::1] kmat = kmat_arr

    cdef double lb = log(e_beta)
    cdef int M, m3, m1, n1, j
    cdef double leb2, eb2, s, egm2, c, rf, base, acc, diag
    cdef double lsb
    cdef Py_ssize_t boff, poff, stride
    cdef double[::1] tmp

    for M in range(1, N + 1):
        m3 = N - M
        pos = 0
        for m2 in range(1, M + 1):
            off_cur[m2] = pos
            pos += (M - m2 + 1) * (m2 + 1)
        for m2 in range(1, M + 1):
            m1 = M - m2
            stride = m2 + 1
            boff = off_cur[m2]
            leb2 = m2 * lb
            eb2 = exp(leb2)
            s = -expm1(leb2)
            egm2 = exp(m2 * lgam)
            # Interior cells from the (m1-1, m2, m3+1) block one stratum down.
            if m1 >= 1:
                poff = off_prev[m2]
                c = sg * s / e_gamma
                for n1 in range(m1):
                    rf = c * m1 / (m1 - n1)
                    for d in range(1, m2 + 1):
                        cur[boff + n1 * stride + d] = (
                            rf * (m2 - d + 1) / d * prev[poff + n1 * stride + d - 1])
            # Edge n1 = m1: no infections; recoveries direct.
            base = exp(m1 * leb2)
            goff = m2 * (m2 + 1) // 2
            for d in range(m2 + 1):
                cur[boff + m1 * stride + d] = base * grows[goff + d]
            # Edge d = 0: no recoveries; infections direct.
            if s <= 0.0:
                for n1 in range(m1):
                    cur[boff + n1 * stride] = 0.0
                cur[boff + m1 * stride] = egm2
            else:
                lsb = log(s)
                for n1 in range(m1 + 1):
                    j = m1 - n1
                    cur[boff + n1 * stride] = egm2 * _binom_pmf_log(
                        lf[m1], lf[j], lf[n1], j, n1, lsb, leb2)
        # Solve the stratum in m1-ascending order: same-stratum successors
        # have strictly smaller n1 and are already done.
        for m2 in range(M, 0, -1):
            m1 = M - m2
            stride = m2 + 1
            boff = off_cur[m2]
            acc = 1.0
            for n1 in range(m1 + 1):
                for d in range(m2 + 1):
                    acc += cur[boff + n1 * stride + d] * kmat[n1, m3 + d]
            diag = cur[boff + m1 * stride]
            kmat[m1, m3] = acc / (1.0 - diag)
        tmp = prev
        prev = cur
        cur = tmp
        off_prev_arr, off_cur_arr = off_cur_arr, off_prev_arr
        off_prev = off_prev_arr
        off_cur = off_cur_arr

    return kmat_arr

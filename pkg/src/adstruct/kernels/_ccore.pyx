# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled versions of the hot kernels in ``_fallback``.

The convolution taps call BLAS dgemm directly on shifted row slices, so no
padded copy of the input is ever built.  Row-major products are issued as
their column-major transposes.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm_rm(char* ta, char* tb, int m, int n, int p,
                          double* a, int lda, double* b, int ldb,
                          double* c, int ldc, double beta) noexcept nogil:
    # row-major C[m, n] (+)= op(A)[m, p] @ op(B)[p, n]
    cdef double one = 1.0
    dgemm(tb, ta, &n, &m, &p, &one, b, &ldb, a, &lda, &beta, c, &ldc)


def conv1d_forward(double[:, ::1] x, double[:, :, ::1] kernel, int dilation):
    cdef int T = x.shape[0]
    cdef int c_in = x.shape[1]
    cdef int k = kernel.shape[0]
    cdef int c_out = kernel.shape[2]
    cdef int half = (k - 1) // 2
    cdef int j, s, lo, hi
    y_arr = np.zeros((T, c_out), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    if T == 0 or c_in == 0 or c_out == 0:
        return y_arr
    with nogil:
        for j in range(k):
            s = (j - half) * dilation
            lo = 0 if s >= 0 else -s
            hi = T - s if s >= 0 else T
            if lo < hi:
                _gemm_rm(b"N", b"N", hi - lo, c_out, c_in,
                         &x[lo + s, 0], c_in, &kernel[j, 0, 0], c_out,
                         &y[lo, 0], c_out, 1.0)
    return y_arr


def conv1d_backward(double[:, ::1] x, double[:, :, ::1] kernel, int dilation,
                    double[:, ::1] grad_out):
    cdef int T = x.shape[0]
    cdef int c_in = x.shape[1]
    cdef int k = kernel.shape[0]
    cdef int c_out = kernel.shape[2]
    cdef int half = (k - 1) // 2
    cdef int j, s, lo, hi
    gx_arr = np.zeros((T, c_in), dtype=np.float64)
    gk_arr = np.zeros((k, c_in, c_out), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, :, ::1] gk = gk_arr
    if T == 0 or c_in == 0 or c_out == 0:
        return gx_arr, gk_arr
    with nogil:
        for j in range(k):
            s = (j - half) * dilation
            lo = 0 if s >= 0 else -s
            hi = T - s if s >= 0 else T
            if lo < hi:
                # grad_x[lo+s:hi+s] += grad_out[lo:hi] @ kernel[j].T
                _gemm_rm(b"N", b"T", hi - lo, c_in, c_out,
                         &grad_out[lo, 0], c_out, &kernel[j, 0, 0], c_out,
                         &gx[lo + s, 0], c_in, 1.0)
                # grad_k[j] = x[lo+s:hi+s].T @ grad_out[lo:hi]
                _gemm_rm(b"T", b"N", c_in, c_out, hi - lo,
                         &x[lo + s, 0], c_in, &grad_out[lo, 0], c_out,
                         &gk[j, 0, 0], c_out, 0.0)
    return gx_arr, gk_arr


def greedy_match(double[::1] pred, double[::1] gt, double tolerance):
    cdef Py_ssize_t p = 0, g
    cdef Py_ssize_t n_pred = pred.shape[0], n_gt = gt.shape[0]
    cdef double t, d
    pairs = []
    for g in range(n_gt):
        t = gt[g]
        while p < n_pred and pred[p] < t and t - pred[p] >= tolerance:
            p += 1
        if p < n_pred:
            d = pred[p] - t
            if d < 0:
                d = -d
            if d < tolerance:
                pairs.append((p, g))
                p += 1
    return pairs


def local_maxima(double[::1] probs, double threshold, Py_ssize_t radius):
    cdef Py_ssize_t T = probs.shape[0]
    cdef Py_ssize_t t, u, lo, hi
    cdef double v
    cdef bint ok
    out = []
    for t in range(T):
        v = probs[t]
        if v < threshold:
            continue
        lo = t - radius if t >= radius else 0
        hi = t + radius + 1 if t + radius + 1 < T else T
        ok = True
        for u in range(lo, hi):
            if u != t and probs[u] >= v:
                ok = False
                break
        if ok:
            out.append(t)
    return out


def precision_sum(hits):
    cdef cnp.uint8_t[::1] h = np.ascontiguousarray(hits, dtype=np.uint8)
    cdef Py_ssize_t r, n = h.shape[0]
    cdef long tp = 0
    cdef double total = 0.0
    for r in range(n):
        if h[r]:
            tp += 1
            total += <double>tp / <double>(r + 1)
    return total

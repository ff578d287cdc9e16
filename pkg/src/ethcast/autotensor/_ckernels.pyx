# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled correlation kernels on flattened, zero-padded volumes.

Both kernels work in "padded coordinates": a volume of shape (Tp, Hp, Wp) is
flattened to length N, and a kernel tap (i, j, k) becomes the scalar offset
``i*Hp*Wp + j*Wp + k``. Output position r then reads ``src[r + offs[tap]]``.
Summation order per output element is fixed: input channel outermost, then
taps in (dt, dh, dw) order.
"""

import numpy as np

from libc.stdlib cimport free, malloc

cdef extern from "_ckernels_impl.h":
    int eth_set_simd(int level) nogil
    int eth_cpu_has_avx2() nogil
    int ETH_HAVE_AVX2
    int eth_simd
    void corr_block_f(float *out, const float *src, const float *w, const Py_ssize_t *offs,
                      float *wt, Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                      Py_ssize_t nb, Py_ssize_t ostride, Py_ssize_t wstride) nogil
    void corr_block_d(double *out, const double *src, const double *w, const Py_ssize_t *offs,
                      double *wt, Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                      Py_ssize_t nb, Py_ssize_t ostride, Py_ssize_t wstride) nogil
    void wgrad_block_f(float *gw, const float *g, const float *src, const Py_ssize_t *offs,
                       Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                       Py_ssize_t M, Py_ssize_t nb) nogil
    void wgrad_block_d(double *gw, const double *g, const double *src, const Py_ssize_t *offs,
                       Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                       Py_ssize_t M, Py_ssize_t nb) nogil

SIMD_LEVELS = ("portable", "avx2")


def simd_levels():
    """SIMD builds usable on this machine, best last."""
    if ETH_HAVE_AVX2 and eth_cpu_has_avx2():
        return SIMD_LEVELS
    return SIMD_LEVELS[:1]


def get_simd():
    return SIMD_LEVELS[eth_simd]


def set_simd(name):
    """Select the SIMD build ("portable", "avx2" or "auto" for the best)."""
    if name == "auto":
        levels = simd_levels()
        name = levels[len(levels) - 1]
    if name not in SIMD_LEVELS:
        raise ValueError(f"unknown SIMD level {name!r}; expected one of {SIMD_LEVELS} or 'auto'")
    if eth_set_simd(SIMD_LEVELS.index(name)) != 0:
        raise ValueError(f"SIMD level {name!r} is not supported on this machine")


set_simd("auto")


ctypedef fused real:
    float
    double


def _check(src, w, out, offs, Py_ssize_t L):
    if src.shape[1] != w.shape[1]:
        raise ValueError("channel mismatch between source and weights")
    if out.shape[0] != src.shape[0] or out.shape[1] != w.shape[0]:
        raise ValueError("output buffer has the wrong batch/channel extent")
    if w.shape[2] != offs.shape[0]:
        raise ValueError("tap count differs from offset count")
    if L > out.shape[2]:
        raise ValueError("output buffer shorter than L")
    if L > 0 and L - 1 + max(offs) >= src.shape[2]:
        raise ValueError("taps read past the end of the source")


def corr_flat(real[:, :, ::1] src, real[:, :, ::1] w, Py_ssize_t[::1] offs,
              Py_ssize_t L, real[:, :, ::1] out):
    """out[b, o, r] = sum_c sum_k w[o, c, k] * src[b, c, r + offs[k]] for r < L."""
    _check(src, w, out, np.asarray(offs), L)
    cdef Py_ssize_t B = src.shape[0], C = src.shape[1], N = src.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2], M = out.shape[2]
    cdef Py_ssize_t b, o, nb
    cdef real *wt
    if B == 0 or O == 0 or L == 0:
        return
    wt = <real *>malloc(sizeof(real) * C * K * 4)
    if wt == NULL:
        raise MemoryError()
    with nogil:
        for b in range(B):
            o = 0
            while o < O:
                nb = 4 if O - o >= 4 else O - o
                if real is float:
                    corr_block_f(&out[b, o, 0], &src[b, 0, 0], &w[o, 0, 0], &offs[0], wt,
                                 C, K, N, L, nb, M, C * K)
                else:
                    corr_block_d(&out[b, o, 0], &src[b, 0, 0], &w[o, 0, 0], &offs[0], wt,
                                 C, K, N, L, nb, M, C * K)
                o += nb
    free(wt)


def corr_flat_wgrad(real[:, :, ::1] g, real[:, :, ::1] src, Py_ssize_t[::1] offs,
                    Py_ssize_t L, real[:, :, ::1] gw):
    """gw[o, c, k] += sum_b sum_{r<L} g[b, o, r] * src[b, c, r + offs[k]]."""
    _check(src, gw, g, np.asarray(offs), L)
    cdef Py_ssize_t B = src.shape[0], C = src.shape[1], N = src.shape[2]
    cdef Py_ssize_t O = gw.shape[0], K = gw.shape[2], M = g.shape[2]
    cdef Py_ssize_t b, o, nb
    if B == 0 or O == 0 or L == 0:
        return
    with nogil:
        for b in range(B):
            o = 0
            while o < O:
                nb = 4 if O - o >= 4 else O - o
                if real is float:
                    wgrad_block_f(&gw[o, 0, 0], &g[b, o, 0], &src[b, 0, 0], &offs[0],
                                  C, K, N, L, M, nb)
                else:
                    wgrad_block_d(&gw[o, 0, 0], &g[b, o, 0], &src[b, 0, 0], &offs[0],
                                  C, K, N, L, M, nb)
                o += nb

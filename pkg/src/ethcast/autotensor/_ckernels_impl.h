/* Correlation kernels: a portable build plus, on x86 with GCC or clang, an
 * AVX2/FMA build chosen at run time. */
#ifndef ETH_CKERNELS_IMPL_H
#define ETH_CKERNELS_IMPL_H

#include <stdlib.h>

#define ETH_RESTRICT __restrict__
#define ETH_RCHUNK 512

#define ETH_T float
#define ETH_VB 16
#define ETH_NAME(x) eth_##x##_f_base
#define ETH_ATTR
#include "_ckernels_body.h"
#undef ETH_T
#undef ETH_VB
#undef ETH_NAME
#undef ETH_ATTR

#define ETH_T double
#define ETH_VB 16
#define ETH_NAME(x) eth_##x##_d_base
#define ETH_ATTR
#include "_ckernels_body.h"
#undef ETH_T
#undef ETH_VB
#undef ETH_NAME
#undef ETH_ATTR

#if defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
#define ETH_HAVE_AVX2 1

#define ETH_T float
#define ETH_VB 32
#define ETH_NAME(x) eth_##x##_f_avx2
#define ETH_ATTR __attribute__((target("avx2,fma")))
#include "_ckernels_body.h"
#undef ETH_T
#undef ETH_VB
#undef ETH_NAME
#undef ETH_ATTR

#define ETH_T double
#define ETH_VB 32
#define ETH_NAME(x) eth_##x##_d_avx2
#define ETH_ATTR __attribute__((target("avx2,fma")))
#include "_ckernels_body.h"
#undef ETH_T
#undef ETH_VB
#undef ETH_NAME
#undef ETH_ATTR

static int eth_cpu_has_avx2(void) {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#else
#define ETH_HAVE_AVX2 0
static int eth_cpu_has_avx2(void) { return 0; }
#endif

/* 0 = portable, 1 = avx2 */
static int eth_simd = 0;

static int eth_set_simd(int level) {
    if (level == 1 && !(ETH_HAVE_AVX2 && eth_cpu_has_avx2())) return -1;
    eth_simd = level;
    return 0;
}

#if ETH_HAVE_AVX2
#define ETH_DISPATCH(fn, suf, ...) \
    do { if (eth_simd) eth_##fn##_##suf##_avx2(__VA_ARGS__); else eth_##fn##_##suf##_base(__VA_ARGS__); } while (0)
#else
#define ETH_DISPATCH(fn, suf, ...) eth_##fn##_##suf##_base(__VA_ARGS__)
#endif

static void corr_block_f(float *out, const float *src, const float *w, const Py_ssize_t *offs,
                         float *wt, Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                         Py_ssize_t nb, Py_ssize_t ostride, Py_ssize_t wstride) {
    ETH_DISPATCH(corr_block, f, out, src, w, offs, wt, C, K, N, L, nb, ostride, wstride);
}

static void corr_block_d(double *out, const double *src, const double *w, const Py_ssize_t *offs,
                         double *wt, Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                         Py_ssize_t nb, Py_ssize_t ostride, Py_ssize_t wstride) {
    ETH_DISPATCH(corr_block, d, out, src, w, offs, wt, C, K, N, L, nb, ostride, wstride);
}

static void wgrad_block_f(float *gw, const float *g, const float *src, const Py_ssize_t *offs,
                          Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                          Py_ssize_t M, Py_ssize_t nb) {
    ETH_DISPATCH(wgrad_block, f, gw, g, src, offs, C, K, N, L, M, nb);
}

static void wgrad_block_d(double *gw, const double *g, const double *src, const Py_ssize_t *offs,
                          Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
                          Py_ssize_t M, Py_ssize_t nb) {
    ETH_DISPATCH(wgrad_block, d, gw, g, src, offs, C, K, N, L, M, nb);
}

#endif

/* Kernel body, included once per (scalar type, vector width, target).
 *
 * Expects: ETH_T (scalar), ETH_VB (vector bytes), ETH_NAME(x) (name mangler),
 * ETH_ATTR (function attributes, possibly empty).
 *
 * Both kernels work on flattened zero-padded volumes: tap k reads
 * src[c, r + offs[k]] for output position r < L. Four output channels are
 * processed per call ("nb" of them valid) so every source load feeds four
 * accumulators.
 */

typedef ETH_T ETH_NAME(vec) __attribute__((vector_size(ETH_VB)));
typedef ETH_T ETH_NAME(uvec) __attribute__((vector_size(ETH_VB), aligned(sizeof(ETH_T)), may_alias));

#define ETH_VL ((Py_ssize_t)(ETH_VB / sizeof(ETH_T)))
#define ETH_LD(p) (*(const ETH_NAME(uvec) *)(p))
#define ETH_ST(p, x) (*(ETH_NAME(uvec) *)(p) = (x))

static ETH_ATTR ETH_T ETH_NAME(hsum)(ETH_NAME(vec) v) {
    ETH_T s = 0;
    for (Py_ssize_t i = 0; i < ETH_VL; i++) s += v[i];
    return s;
}

/* out[q, r] = sum_c sum_k w[q, c, k] * src[c, r + offs[k]], q < nb, r < L.
 * wt is scratch of C*K*4 scalars. */
static ETH_ATTR void ETH_NAME(corr_block)(
        ETH_T *ETH_RESTRICT out, const ETH_T *ETH_RESTRICT src, const ETH_T *ETH_RESTRICT w,
        const Py_ssize_t *ETH_RESTRICT offs, ETH_T *ETH_RESTRICT wt,
        Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L,
        Py_ssize_t nb, Py_ssize_t ostride, Py_ssize_t wstride) {
    typedef ETH_NAME(vec) vec;
    for (Py_ssize_t ck = 0; ck < C * K; ck++)
        for (Py_ssize_t q = 0; q < 4; q++)
            wt[ck * 4 + q] = q < nb ? w[q * wstride + ck] : (ETH_T)0;
    const Py_ssize_t step = 2 * ETH_VL;
    Py_ssize_t p0 = 0;
    for (; p0 + step <= L; p0 += step) {
        vec a0 = {0}, b0 = {0}, a1 = {0}, b1 = {0}, a2 = {0}, b2 = {0}, a3 = {0}, b3 = {0};
        for (Py_ssize_t c = 0; c < C; c++) {
            const ETH_T *xc = src + c * N + p0;
            const ETH_T *wc = wt + c * K * 4;
            for (Py_ssize_t k = 0; k < K; k++) {
                const ETH_T *xs = xc + offs[k];
                const ETH_T *wk = wc + 4 * k;
                vec u = ETH_LD(xs), v = ETH_LD(xs + ETH_VL);
                a0 += wk[0] * u; b0 += wk[0] * v;
                a1 += wk[1] * u; b1 += wk[1] * v;
                a2 += wk[2] * u; b2 += wk[2] * v;
                a3 += wk[3] * u; b3 += wk[3] * v;
            }
        }
        ETH_ST(out + p0, a0); ETH_ST(out + p0 + ETH_VL, b0);
        if (nb > 1) { ETH_ST(out + ostride + p0, a1); ETH_ST(out + ostride + p0 + ETH_VL, b1); }
        if (nb > 2) { ETH_ST(out + 2 * ostride + p0, a2); ETH_ST(out + 2 * ostride + p0 + ETH_VL, b2); }
        if (nb > 3) { ETH_ST(out + 3 * ostride + p0, a3); ETH_ST(out + 3 * ostride + p0 + ETH_VL, b3); }
    }
    for (; p0 < L; p0++) {
        ETH_T acc[4] = {0, 0, 0, 0};
        for (Py_ssize_t c = 0; c < C; c++)
            for (Py_ssize_t k = 0; k < K; k++) {
                const ETH_T v = src[c * N + p0 + offs[k]];
                const ETH_T *wk = wt + (c * K + k) * 4;
                acc[0] += wk[0] * v; acc[1] += wk[1] * v;
                acc[2] += wk[2] * v; acc[3] += wk[3] * v;
            }
        for (Py_ssize_t q = 0; q < nb; q++) out[q * ostride + p0] = acc[q];
    }
}

/* gw[q, c, k] += sum_{r<L} g[q, r] * src[c, r + offs[k]], q < nb.
 * r runs in fixed chunks; each chunk is reduced over fixed vector lanes. */
static ETH_ATTR void ETH_NAME(wgrad_block)(
        ETH_T *ETH_RESTRICT gw, const ETH_T *ETH_RESTRICT g, const ETH_T *ETH_RESTRICT src,
        const Py_ssize_t *ETH_RESTRICT offs,
        Py_ssize_t C, Py_ssize_t K, Py_ssize_t N, Py_ssize_t L, Py_ssize_t M, Py_ssize_t nb) {
    typedef ETH_NAME(vec) vec;
    const ETH_T *g1 = g + (nb > 1 ? M : 0), *g2 = g + (nb > 2 ? 2 * M : 0);
    const ETH_T *g3 = g + (nb > 3 ? 3 * M : 0);
    for (Py_ssize_t r0 = 0; r0 < L; r0 += ETH_RCHUNK) {
        const Py_ssize_t r1 = r0 + ETH_RCHUNK < L ? r0 + ETH_RCHUNK : L;
        const Py_ssize_t rv = r0 + ((r1 - r0) / ETH_VL) * ETH_VL;
        for (Py_ssize_t c = 0; c < C; c++) {
            for (Py_ssize_t k = 0; k < K; k++) {
                const ETH_T *xs = src + c * N + offs[k];
                vec l0 = {0}, l1 = {0}, l2 = {0}, l3 = {0};
                for (Py_ssize_t r = r0; r < rv; r += ETH_VL) {
                    vec v = ETH_LD(xs + r);
                    l0 += ETH_LD(g + r) * v; l1 += ETH_LD(g1 + r) * v;
                    l2 += ETH_LD(g2 + r) * v; l3 += ETH_LD(g3 + r) * v;
                }
                ETH_T t[4] = {0, 0, 0, 0};
                for (Py_ssize_t r = rv; r < r1; r++) {
                    const ETH_T v = xs[r];
                    t[0] += g[r] * v; t[1] += g1[r] * v; t[2] += g2[r] * v; t[3] += g3[r] * v;
                }
                ETH_T *dst = gw + c * K + k;
                const Py_ssize_t qs = C * K;
                dst[0] += ETH_NAME(hsum)(l0) + t[0];
                if (nb > 1) dst[qs] += ETH_NAME(hsum)(l1) + t[1];
                if (nb > 2) dst[2 * qs] += ETH_NAME(hsum)(l2) + t[2];
                if (nb > 3) dst[3 * qs] += ETH_NAME(hsum)(l3) + t[3];
            }
        }
    }
}

#undef ETH_VL
#undef ETH_LD
#undef ETH_ST

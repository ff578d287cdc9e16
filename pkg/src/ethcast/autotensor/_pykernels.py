"""NumPy implementation of the flat correlation kernels.

Same contract as the compiled ``_ckernels`` module. Each kernel tap is one
GEMM over a contiguous slice of the flattened padded source, so the
summation order is taps outermost with channels inside the GEMM; results
agree with the compiled path to rounding, not bitwise.
"""

import numpy as np


def _check(src, w, out, offs, L):
    if src.shape[1] != w.shape[1]:
        raise ValueError("channel mismatch between source and weights")
    if out.shape[0] != src.shape[0] or out.shape[1] != w.shape[0]:
        raise ValueError("output buffer has the wrong batch/channel extent")
    if w.shape[2] != len(offs):
        raise ValueError("tap count differs from offset count")
    if L > out.shape[2]:
        raise ValueError("output buffer shorter than L")
    if L > 0 and L - 1 + int(np.max(offs)) >= src.shape[2]:
        raise ValueError("taps read past the end of the source")


def corr_flat(src, w, offs, L, out):
    """out[b, o, r] = sum_c sum_k w[o, c, k] * src[b, c, r + offs[k]] for r < L."""
    _check(src, w, out, offs, L)
    if L == 0:
        return
    taps = [np.ascontiguousarray(w[:, :, k]) for k in range(w.shape[2])]
    for b in range(src.shape[0]):
        acc = out[b, :, :L]
        acc[...] = 0
        for k, off in enumerate(offs):
            acc += taps[k] @ src[b, :, off:off + L]


def corr_flat_wgrad(g, src, offs, L, gw):
    """gw[o, c, k] += sum_b sum_{r<L} g[b, o, r] * src[b, c, r + offs[k]]."""
    _check(src, gw, g, offs, L)
    if L == 0:
        return
    for b in range(src.shape[0]):
        gb = g[b, :, :L]
        for k, off in enumerate(offs):
            gw[:, :, k] += gb @ src[b, :, off:off + L].T

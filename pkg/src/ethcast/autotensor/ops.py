"""Forward and backward passes for the layers used by the 3D U-Net.

Tensors are plain ``numpy.ndarray`` objects laid out as
(batch, channel, time, height, width). Every backward function is the exact
adjoint of its forward counterpart; there is no autograd graph.
"""

import numpy as np

from ..errors import ArgumentError, NumericFailure
from . import _backend


def _tap_offsets(kshape, hp, wp):
    kt, kh, kw = kshape
    return np.array(
        [i * hp * wp + j * wp + k for i in range(kt) for j in range(kh) for k in range(kw)],
        dtype=np.intp,
    )


def _resolve_padding(kshape, padding):
    if padding is None:
        if any(k % 2 == 0 for k in kshape):
            raise ArgumentError(f"'same' convolution needs odd kernel extents, got {kshape}")
        return tuple(k // 2 for k in kshape)
    padding = tuple(int(p) for p in padding)
    if len(padding) != 3 or any(p < 0 for p in padding):
        raise ArgumentError(f"padding must be three non-negative integers, got {padding}")
    return padding


def _conv_geometry(xshape, wshape, padding):
    if len(xshape) != 5 or len(wshape) != 5:
        raise ArgumentError("conv3d expects 5-D input and weight")
    if xshape[1] != wshape[1]:
        raise ArgumentError(
            f"channel mismatch: input has {xshape[1]}, weight expects {wshape[1]}"
        )
    kshape = tuple(wshape[2:])
    pad = _resolve_padding(kshape, padding)
    padded = tuple(n + 2 * p for n, p in zip(xshape[2:], pad))
    outsz = tuple(n - k + 1 for n, k in zip(padded, kshape))
    if any(n < 1 for n in outsz):
        raise ArgumentError(f"kernel {kshape} larger than padded input {padded}")
    return kshape, pad, padded, outsz


def conv3d_forward(x, weight, bias, padding=None, kernels=None):
    """Stride-1 3D cross-correlation.

    Parameters
    ----------
    x : ndarray, shape (B, Cin, T, H, W)
    weight : ndarray, shape (Cout, Cin, kt, kh, kw)
    bias : ndarray, shape (Cout,)
    padding : tuple of 3 ints, optional
        Zero padding per axis. ``None`` means "same" padding, which requires
        odd kernel extents.
    kernels : module, optional
        Kernel backend; defaults to the active one.

    Returns
    -------
    ndarray, shape (B, Cout, T', H', W')
    """
    kernels = kernels or _backend.kernels
    kshape, pad, (tp, hp, wp), (to, ho, wo) = _conv_geometry(x.shape, weight.shape, padding)
    dtype = np.result_type(x.dtype, weight.dtype)
    bsz, cin = x.shape[:2]
    cout = weight.shape[0]
    xp = np.zeros((bsz, cin, tp, hp, wp), dtype=dtype)
    xp[:, :, pad[0]:pad[0] + x.shape[2], pad[1]:pad[1] + x.shape[3], pad[2]:pad[2] + x.shape[4]] = x
    offs = _tap_offsets(kshape, hp, wp)
    span = (to - 1) * hp * wp + (ho - 1) * wp + wo
    out = np.zeros((bsz, cout, to * hp * wp), dtype=dtype)
    w = np.ascontiguousarray(weight.reshape(cout, cin, -1), dtype=dtype)
    kernels.corr_flat(xp.reshape(bsz, cin, -1), w, offs, span, out)
    y = out.reshape(bsz, cout, to, hp, wp)[:, :, :, :ho, :wo]
    y = y + np.asarray(bias, dtype=dtype).reshape(1, cout, 1, 1, 1)
    return np.ascontiguousarray(y)


def conv3d_backward(grad_out, x, weight, padding=None, kernels=None):
    """Gradients of :func:`conv3d_forward` with respect to input, weight, bias."""
    kernels = kernels or _backend.kernels
    kshape, pad, (tp, hp, wp), (to, ho, wo) = _conv_geometry(x.shape, weight.shape, padding)
    bsz, cin = x.shape[:2]
    cout = weight.shape[0]
    if grad_out.shape != (bsz, cout, to, ho, wo):
        raise ArgumentError(
            f"grad_out shape {grad_out.shape} does not match forward output {(bsz, cout, to, ho, wo)}"
        )
    dtype = np.result_type(grad_out.dtype, x.dtype, weight.dtype)
    kt, kh, kw = kshape
    offs = _tap_offsets(kshape, hp, wp)
    span = (to - 1) * hp * wp + (ho - 1) * wp + wo

    # grad_out embedded in padded-coordinate layout, zero outside the valid box
    g = np.zeros((bsz, cout, to, hp, wp), dtype=dtype)
    g[:, :, :, :ho, :wo] = grad_out
    g = g.reshape(bsz, cout, -1)

    xp = np.zeros((bsz, cin, tp, hp, wp), dtype=dtype)
    xp[:, :, pad[0]:pad[0] + x.shape[2], pad[1]:pad[1] + x.shape[3], pad[2]:pad[2] + x.shape[4]] = x
    xp = xp.reshape(bsz, cin, -1)

    gw = np.zeros((cout, cin, kt * kh * kw), dtype=dtype)
    kernels.corr_flat_wgrad(g, xp, offs, span, gw)

    # input gradient: correlate the front-padded gradient with flipped, transposed taps
    npad = tp * hp * wp
    lead = int(offs[-1])
    gext = np.zeros((bsz, cout, npad + lead), dtype=dtype)
    gext[:, :, lead:lead + g.shape[2]] = g
    wt = np.ascontiguousarray(
        weight[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4).reshape(cin, cout, -1),
        dtype=dtype,
    )
    gxp = np.zeros((bsz, cin, npad), dtype=dtype)
    kernels.corr_flat(gext, wt, offs, npad, gxp)
    gx = gxp.reshape(bsz, cin, tp, hp, wp)[
        :, :, pad[0]:pad[0] + x.shape[2], pad[1]:pad[1] + x.shape[3], pad[2]:pad[2] + x.shape[4]
    ]
    gb = grad_out.sum(axis=(0, 2, 3, 4), dtype=dtype)
    return np.ascontiguousarray(gx), gw.reshape(weight.shape), gb


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def maxpool2_spatial_forward(x):
    """2x2 max pooling over (H, W); T is untouched.

    Returns the pooled tensor and the flat argmax index (0..3) of each window,
    first maximum wins.
    """
    b, c, t, h, w = x.shape
    if h % 2 or w % 2:
        raise ArgumentError(f"maxpool needs even H and W, got {h}x{w}")
    win = x.reshape(b, c, t, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 3, 5, 4, 6)
    win = win.reshape(b, c, t, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_spatial_backward(grad_out, idx, input_shape):
    b, c, t, h, w = input_shape
    win = np.zeros((b, c, t, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, idx[..., None], grad_out[..., None], axis=-1)
    win = win.reshape(b, c, t, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 3, 5, 4, 6)
    return np.ascontiguousarray(win.reshape(input_shape))


def upsample2_nearest(x):
    return np.repeat(np.repeat(x, 2, axis=3), 2, axis=4)


def upsample2_nearest_backward(grad_out):
    b, c, t, h, w = grad_out.shape
    return grad_out.reshape(b, c, t, h // 2, 2, w // 2, 2).sum(axis=(4, 6))


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ArgumentError(f"cannot concatenate {a.shape} and {b.shape} on channels")
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(grad_out, n_first):
    return grad_out[:, :n_first], grad_out[:, n_first:]


def mse_loss_forward(pred, target):
    if pred.shape != target.shape:
        raise ArgumentError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def mse_loss_backward(pred, target):
    return (2.0 / pred.size) * (pred - target)


def check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericFailure(f"non-finite values in {what}")

"""Pure-numpy conv kernels: the fallback backend for cflab.kernels.

Layout is NHWC with H = width (AP axis) and W = height (user axis); kernels
are (k_w, k_h, c_in, c_out). All three routines implement strided
cross-correlation with zero padding and its exact adjoints. The k_w*k_h
loop keeps memory flat while the per-offset slice work runs as one matmul.
"""

import numpy as np


def _pad(x, p_w, p_h):
    if p_w == 0 and p_h == 0:
        return x
    return np.pad(x, ((0, 0), (p_w, p_w), (p_h, p_h), (0, 0)))


def out_dim(in_dim, kernel, padding, stride):
    """Output width/height of a strided conv: (in + 2p - k) // s + 1."""
    return (in_dim + 2 * padding - kernel) // stride + 1


def conv2d_forward(x, w, b, stride, padding):
    s_w, s_h = stride
    p_w, p_h = padding
    k_w, k_h, c_in, c_out = w.shape
    n, in_w, in_h, _ = x.shape
    o_w = out_dim(in_w, k_w, p_w, s_w)
    o_h = out_dim(in_h, k_h, p_h, s_h)
    xp = _pad(x, p_w, p_h)
    acc = np.zeros((n, o_w, o_h, c_out))
    for u in range(k_w):
        for v in range(k_h):
            xs = xp[:, u : u + s_w * o_w : s_w, v : v + s_h * o_h : s_h, :]
            acc += xs @ w[u, v]
    return acc + b


def conv2d_backward_input(gy, w, stride, padding, in_w, in_h):
    s_w, s_h = stride
    p_w, p_h = padding
    k_w, k_h, c_in, _ = w.shape
    n, o_w, o_h, _ = gy.shape
    gxp = np.zeros((n, in_w + 2 * p_w, in_h + 2 * p_h, c_in))
    for u in range(k_w):
        for v in range(k_h):
            gxp[:, u : u + s_w * o_w : s_w, v : v + s_h * o_h : s_h, :] += (
                gy @ w[u, v].T
            )
    return gxp[:, p_w : p_w + in_w, p_h : p_h + in_h, :]


def conv2d_backward_weights(x, gy, k_w, k_h, stride, padding):
    s_w, s_h = stride
    p_w, p_h = padding
    n, o_w, o_h, c_out = gy.shape
    c_in = x.shape[3]
    xp = _pad(x, p_w, p_h)
    gw = np.empty((k_w, k_h, c_in, c_out))
    for u in range(k_w):
        for v in range(k_h):
            xs = xp[:, u : u + s_w * o_w : s_w, v : v + s_h * o_h : s_h, :]
            gw[u, v] = np.tensordot(xs, gy, axes=([0, 1, 2], [0, 1, 2]))
    return gw

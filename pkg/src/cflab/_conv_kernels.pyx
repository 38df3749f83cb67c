# Compiled conv kernels: drop-in twin of _conv_numpy with direct loops.
# Same NHWC layout and (k_w, k_h, c_in, c_out) kernel shape; inputs must be
# C-contiguous float64 (cflab.kernels coerces before dispatching here).

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()


def out_dim(int in_dim, int kernel, int padding, int stride):
    return (in_dim + 2 * padding - kernel) // stride + 1


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] b, stride, padding):
    cdef int s_w = stride[0], s_h = stride[1]
    cdef int p_w = padding[0], p_h = padding[1]
    cdef int k_w = w.shape[0], k_h = w.shape[1]
    cdef int c_in = w.shape[2], c_out = w.shape[3]
    cdef int n = x.shape[0], in_w = x.shape[1], in_h = x.shape[2]
    cdef int o_w = (in_w + 2 * p_w - k_w) // s_w + 1
    cdef int o_h = (in_h + 2 * p_h - k_h) // s_h + 1

    out_arr = np.empty((n, o_w, o_h, c_out), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef int bi, ox, oy, u, v, ci, co, ix, iy
    cdef double acc

    with nogil:
        for bi in range(n):
            for ox in range(o_w):
                for oy in range(o_h):
                    for co in range(c_out):
                        acc = b[co]
                        for u in range(k_w):
                            ix = ox * s_w + u - p_w
                            if ix < 0 or ix >= in_w:
                                continue
                            for v in range(k_h):
                                iy = oy * s_h + v - p_h
                                if iy < 0 or iy >= in_h:
                                    continue
                                for ci in range(c_in):
                                    acc += x[bi, ix, iy, ci] * w[u, v, ci, co]
                        out[bi, ox, oy, co] = acc
    return out_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_backward_input(double[:, :, :, ::1] gy, double[:, :, :, ::1] w,
                          stride, padding, int in_w, int in_h):
    cdef int s_w = stride[0], s_h = stride[1]
    cdef int p_w = padding[0], p_h = padding[1]
    cdef int k_w = w.shape[0], k_h = w.shape[1]
    cdef int c_in = w.shape[2], c_out = w.shape[3]
    cdef int n = gy.shape[0], o_w = gy.shape[1], o_h = gy.shape[2]

    gx_arr = np.zeros((n, in_w, in_h, c_in), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef int bi, ox, oy, u, v, ci, co, ix, iy
    cdef double g

    with nogil:
        for bi in range(n):
            for ox in range(o_w):
                for oy in range(o_h):
                    for co in range(c_out):
                        g = gy[bi, ox, oy, co]
                        for u in range(k_w):
                            ix = ox * s_w + u - p_w
                            if ix < 0 or ix >= in_w:
                                continue
                            for v in range(k_h):
                                iy = oy * s_h + v - p_h
                                if iy < 0 or iy >= in_h:
                                    continue
                                for ci in range(c_in):
                                    gx[bi, ix, iy, ci] += g * w[u, v, ci, co]
    return gx_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_backward_weights(double[:, :, :, ::1] x, double[:, :, :, ::1] gy,
                            int k_w, int k_h, stride, padding):
    cdef int s_w = stride[0], s_h = stride[1]
    cdef int p_w = padding[0], p_h = padding[1]
    cdef int n = x.shape[0], in_w = x.shape[1], in_h = x.shape[2]
    cdef int c_in = x.shape[3]
    cdef int o_w = gy.shape[1], o_h = gy.shape[2], c_out = gy.shape[3]

    gw_arr = np.zeros((k_w, k_h, c_in, c_out), dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef int bi, ox, oy, u, v, ci, co, ix, iy
    cdef double xv

    with nogil:
        for bi in range(n):
            for ox in range(o_w):
                for oy in range(o_h):
                    for u in range(k_w):
                        ix = ox * s_w + u - p_w
                        if ix < 0 or ix >= in_w:
                            continue
                        for v in range(k_h):
                            iy = oy * s_h + v - p_h
                            if iy < 0 or iy >= in_h:
                                continue
                            for ci in range(c_in):
                                xv = x[bi, ix, iy, ci]
                                for co in range(c_out):
                                    gw[u, v, ci, co] += xv * gy[bi, ox, oy, co]
    return gw_arr

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels.

Same signatures and accumulation order as ``_kernels_py``; results are
bitwise identical to the numpy versions.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col3d(const double[:, :, :, :, ::1] xp, kernel, stride, out_shape):
    cdef Py_ssize_t kt = kernel[0], kh = kernel[1], kw = kernel[2]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t lo = out_shape[0], ho = out_shape[1], wo = out_shape[2]
    cdef Py_ssize_t nb = xp.shape[0], nc = xp.shape[1]
    cdef Py_ssize_t ncol = nc * kt * kh * kw
    out = np.empty((nb * lo * ho * wo, ncol), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t b, t, y, x, c, i, j, k, row, col
    with nogil:
        row = 0
        for b in range(nb):
            for t in range(lo):
                for y in range(ho):
                    for x in range(wo):
                        col = 0
                        for c in range(nc):
                            for i in range(kt):
                                for j in range(kh):
                                    for k in range(kw):
                                        cols[row, col] = xp[b, c, t * st + i, y * sh + j, x * sw + k]
                                        col += 1
                        row += 1
    return out


def col2im3d(const double[:, ::1] dcols, xp_shape, kernel, stride, out_shape):
    cdef Py_ssize_t kt = kernel[0], kh = kernel[1], kw = kernel[2]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t lo = out_shape[0], ho = out_shape[1], wo = out_shape[2]
    cdef Py_ssize_t nb = xp_shape[0], nc = xp_shape[1]
    out = np.zeros(tuple(xp_shape), dtype=np.float64)
    cdef double[:, :, :, :, ::1] dxp = out
    cdef Py_ssize_t b, t, y, x, c, i, j, k, row, col
    cdef Py_ssize_t per_b = lo * ho * wo
    # Kernel offsets outermost so every input cell sums its contributions in
    # (i, j, k) order, matching the numpy fallback.
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            col = ((c * kt + i) * kh + j) * kw + k
                            row = b * per_b
                            for t in range(lo):
                                for y in range(ho):
                                    for x in range(wo):
                                        dxp[b, c, t * st + i, y * sh + j, x * sw + k] += dcols[row, col]
                                        row += 1
    return out


def maxpool3d_forward(const double[:, :, :, :, ::1] x, pool):
    cdef Py_ssize_t pt = pool[0], ph = pool[1], pw = pool[2]
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1]
    cdef Py_ssize_t lo = x.shape[2] // pt, ho = x.shape[3] // ph, wo = x.shape[4] // pw
    out_a = np.empty((nb, nc, lo, ho, wo), dtype=np.float64)
    arg_a = np.empty((nb, nc, lo, ho, wo), dtype=np.int64)
    cdef double[:, :, :, :, ::1] out = out_a
    cdef long long[:, :, :, :, ::1] arg = arg_a
    cdef Py_ssize_t b, c, t, y, z, i, j, k, idx, best_idx
    cdef double v, best
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for t in range(lo):
                    for y in range(ho):
                        for z in range(wo):
                            best = x[b, c, t * pt, y * ph, z * pw]
                            best_idx = 0
                            idx = 0
                            for i in range(pt):
                                for j in range(ph):
                                    for k in range(pw):
                                        v = x[b, c, t * pt + i, y * ph + j, z * pw + k]
                                        if v > best:
                                            best = v
                                            best_idx = idx
                                        idx += 1
                            out[b, c, t, y, z] = best
                            arg[b, c, t, y, z] = best_idx
    return out_a, arg_a


def maxpool3d_backward(const double[:, :, :, :, ::1] g, const long long[:, :, :, :, ::1] arg, pool, in_shape):
    cdef Py_ssize_t pt = pool[0], ph = pool[1], pw = pool[2]
    cdef Py_ssize_t nb = g.shape[0], nc = g.shape[1]
    cdef Py_ssize_t lo = g.shape[2], ho = g.shape[3], wo = g.shape[4]
    out = np.zeros(tuple(in_shape), dtype=np.float64)
    cdef double[:, :, :, :, ::1] dx = out
    cdef Py_ssize_t b, c, t, y, z, a, i, j, k
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for t in range(lo):
                    for y in range(ho):
                        for z in range(wo):
                            a = arg[b, c, t, y, z]
                            i = a // (ph * pw)
                            j = (a // pw) % ph
                            k = a % pw
                            dx[b, c, t * pt + i, y * ph + j, z * pw + k] = g[b, c, t, y, z]
    return out

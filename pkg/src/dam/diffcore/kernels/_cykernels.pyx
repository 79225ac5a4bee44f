# Compiled implementations of the hot inner kernels: same-padded patch
# extraction (im2col) and 2x2 max pooling forward/backward. Semantics must
# match _numpy_backend exactly, including argmax tie-breaking (first window
# element in row-major (di, dj) order wins).

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "cython"

ctypedef fused floating:
    float
    double


def im2col(x, int kh, int kw):
    if x.dtype == np.float32:
        return _im2col[float](x, kh, kw)
    return _im2col[double](np.ascontiguousarray(x, dtype=np.float64), kh, kw)


cdef _im2col(floating[:, :, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    out_np = np.zeros((b * h * w, kh * kw * c), dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, ::1] out = out_np
    cdef Py_ssize_t bi, i, j, di, dj, ci, row, col, si, sj
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                row = (bi * h + i) * w + j
                for di in range(kh):
                    si = i + di - ph
                    if si < 0 or si >= h:
                        continue
                    for dj in range(kw):
                        sj = j + dj - pw
                        if sj < 0 or sj >= w:
                            continue
                        col = (di * kw + dj) * c
                        for ci in range(c):
                            out[row, col + ci] = x[bi, si, sj, ci]
    return out_np


def maxpool2x2_forward(x):
    if x.dtype == np.float32:
        return _maxpool_fwd[float](x)
    return _maxpool_fwd[double](np.ascontiguousarray(x, dtype=np.float64))


cdef _maxpool_fwd(floating[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    out_np = np.empty((b, h2, w2, c), dtype=np.float32 if floating is float else np.float64)
    arg_np = np.empty((b, h2, w2, c), dtype=np.int8)
    cdef floating[:, :, :, ::1] out = out_np
    cdef signed char[:, :, :, ::1] arg = arg_np
    cdef Py_ssize_t bi, i, j, ci, di, dj
    cdef floating best, v
    cdef signed char besti
    for bi in range(b):
        for i in range(h2):
            for j in range(w2):
                for ci in range(c):
                    best = x[bi, 2 * i, 2 * j, ci]
                    besti = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[bi, 2 * i + di, 2 * j + dj, ci]
                            if v > best:
                                best = v
                                besti = <signed char> (2 * di + dj)
                    out[bi, i, j, ci] = best
                    arg[bi, i, j, ci] = besti
    return out_np, arg_np


def maxpool2x2_backward(g, arg, Py_ssize_t h, Py_ssize_t w):
    if g.dtype == np.float32:
        return _maxpool_bwd[float](np.ascontiguousarray(g), arg, h, w)
    return _maxpool_bwd[double](np.ascontiguousarray(g, dtype=np.float64), arg, h, w)


cdef _maxpool_bwd(floating[:, :, :, ::1] g, signed char[:, :, :, ::1] arg, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t b = g.shape[0], h2 = g.shape[1], w2 = g.shape[2], c = g.shape[3]
    gx_np = np.zeros((b, h, w, c), dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, :, :, ::1] gx = gx_np
    cdef Py_ssize_t bi, i, j, ci
    cdef signed char a
    for bi in range(b):
        for i in range(h2):
            for j in range(w2):
                for ci in range(c):
                    a = arg[bi, i, j, ci]
                    gx[bi, 2 * i + (a >> 1), 2 * j + (a & 1), ci] = g[bi, i, j, ci]
    return gx_np

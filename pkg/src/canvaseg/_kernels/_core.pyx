# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics mirror python_ref exactly."""

import numpy as np

from libc.math cimport floor

name = "compiled"

ctypedef fused real:
    float
    double


cdef inline void _bil1d(double coord, Py_ssize_t size,
                        Py_ssize_t *i0, Py_ssize_t *i1, double *frac) nogil:
    cdef double u = coord - 0.5
    cdef double m = size - 1.0
    cdef Py_ssize_t a
    if u < 0.0:
        u = 0.0
    if u > m:
        u = m
    a = <Py_ssize_t>floor(u)
    if a > size - 2:
        a = size - 2
    if a < 0:
        a = 0
    i0[0] = a
    frac[0] = u - a
    i1[0] = a + 1 if a + 1 < size else size - 1


def conv2d_forward(real[:, :, ::1] xp, real[:, :, :, ::1] kern, Py_ssize_t stride):
    cdef Py_ssize_t kh = kern.shape[0], kw = kern.shape[1]
    cdef Py_ssize_t cin = kern.shape[2], cout = kern.shape[3]
    cdef Py_ssize_t oh = (xp.shape[0] - kh) // stride + 1
    cdef Py_ssize_t ow = (xp.shape[1] - kw) // stride + 1
    out_np = np.empty((oh, ow, cout), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] y = out_np
    cdef double[::1] acc = np.empty(cout, dtype=np.float64)
    cdef Py_ssize_t i, j, co, ki, kj, ci, r, c
    cdef double v
    # co innermost: both kern[ki,kj,ci,:] and the accumulator are contiguous
    with nogil:
        for i in range(oh):
            for j in range(ow):
                for co in range(cout):
                    acc[co] = 0.0
                for ki in range(kh):
                    r = i * stride + ki
                    for kj in range(kw):
                        c = j * stride + kj
                        for ci in range(cin):
                            v = xp[r, c, ci]
                            for co in range(cout):
                                acc[co] += v * kern[ki, kj, ci, co]
                for co in range(cout):
                    y[i, j, co] = <real>acc[co]
    return out_np


def conv2d_backward(real[:, :, ::1] xp, real[:, :, :, ::1] kern,
                    Py_ssize_t stride, real[:, :, ::1] gy):
    cdef Py_ssize_t kh = kern.shape[0], kw = kern.shape[1]
    cdef Py_ssize_t cin = kern.shape[2], cout = kern.shape[3]
    cdef Py_ssize_t oh = gy.shape[0], ow = gy.shape[1]
    dtype = np.float32 if real is float else np.float64
    gxp_np = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2]), dtype=dtype)
    gk_np = np.zeros((kh, kw, cin, cout), dtype=dtype)
    cdef real[:, :, ::1] gxp = gxp_np
    cdef real[:, :, :, ::1] gk = gk_np
    cdef Py_ssize_t i, j, co, ki, kj, ci, r, c
    cdef double v, acc
    with nogil:
        for i in range(oh):
            for j in range(ow):
                for ki in range(kh):
                    r = i * stride + ki
                    for kj in range(kw):
                        c = j * stride + kj
                        for ci in range(cin):
                            v = xp[r, c, ci]
                            acc = 0.0
                            for co in range(cout):
                                acc += gy[i, j, co] * kern[ki, kj, ci, co]
                            for co in range(cout):
                                gk[ki, kj, ci, co] += <real>(gy[i, j, co] * v)
                            gxp[r, c, ci] += <real>acc
    return gxp_np, gk_np


def bilinear_crop_forward(real[:, :, ::1] src, double x0, double y0,
                          double x1, double y1, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], ch = src.shape[2]
    out_np = np.empty((out_h, out_w, ch), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t i, j, c, r0, r1, c0, c1
    cdef double ys, xs, fy, fx, v
    with nogil:
        for i in range(out_h):
            ys = y0 + (i + 0.5) * (y1 - y0) / out_h
            _bil1d(ys, h, &r0, &r1, &fy)
            for j in range(out_w):
                xs = x0 + (j + 0.5) * (x1 - x0) / out_w
                _bil1d(xs, w, &c0, &c1, &fx)
                for c in range(ch):
                    v = ((1 - fy) * (1 - fx) * src[r0, c0, c]
                         + (1 - fy) * fx * src[r0, c1, c]
                         + fy * (1 - fx) * src[r1, c0, c]
                         + fy * fx * src[r1, c1, c])
                    out[i, j, c] = <real>v
    return out_np


def bilinear_crop_backward(Py_ssize_t src_h, Py_ssize_t src_w, double x0, double y0,
                           double x1, double y1, real[:, :, ::1] gy):
    cdef Py_ssize_t out_h = gy.shape[0], out_w = gy.shape[1], ch = gy.shape[2]
    gsrc_acc = np.zeros((src_h, src_w, ch), dtype=np.float64)
    cdef double[:, :, ::1] gs = gsrc_acc
    cdef Py_ssize_t i, j, c, r0, r1, c0, c1
    cdef double ys, xs, fy, fx, g
    with nogil:
        for i in range(out_h):
            ys = y0 + (i + 0.5) * (y1 - y0) / out_h
            _bil1d(ys, src_h, &r0, &r1, &fy)
            for j in range(out_w):
                xs = x0 + (j + 0.5) * (x1 - x0) / out_w
                _bil1d(xs, src_w, &c0, &c1, &fx)
                for c in range(ch):
                    g = gy[i, j, c]
                    gs[r0, c0, c] += (1 - fy) * (1 - fx) * g
                    gs[r0, c1, c] += (1 - fy) * fx * g
                    gs[r1, c0, c] += fy * (1 - fx) * g
                    gs[r1, c1, c] += fy * fx * g
    if real is float:
        return gsrc_acc.astype(np.float32)
    return gsrc_acc


cdef inline Py_ssize_t _span_lo(double v) nogil:
    cdef Py_ssize_t lo = <Py_ssize_t>floor(v)
    return lo if lo > 0 else 0


cdef inline Py_ssize_t _span_hi(double v, Py_ssize_t limit) nogil:
    cdef Py_ssize_t hi = <Py_ssize_t>floor(v)
    return hi if hi < limit - 1 else limit - 1


def bilinear_paste_forward(real[:, ::1] patch, double x0, double y0,
                           double x1, double y1, Py_ssize_t canvas_h,
                           Py_ssize_t canvas_w, double fill):
    cdef Py_ssize_t ph = patch.shape[0], pw = patch.shape[1]
    canvas_np = np.full((canvas_h, canvas_w), fill,
                        dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] canvas = canvas_np
    cdef Py_ssize_t r_lo = _span_lo(y0), r_hi = _span_hi(y1, canvas_h)
    cdef Py_ssize_t c_lo = _span_lo(x0), c_hi = _span_hi(x1, canvas_w)
    cdef Py_ssize_t r, c, r0, r1, c0, c1
    cdef double py, px, fy, fx, v
    if r_hi < r_lo or c_hi < c_lo:
        return canvas_np
    with nogil:
        for r in range(r_lo, r_hi + 1):
            py = (r + 0.5 - y0) / (y1 - y0) * ph
            _bil1d(py, ph, &r0, &r1, &fy)
            for c in range(c_lo, c_hi + 1):
                px = (c + 0.5 - x0) / (x1 - x0) * pw
                _bil1d(px, pw, &c0, &c1, &fx)
                v = ((1 - fy) * (1 - fx) * patch[r0, c0]
                     + (1 - fy) * fx * patch[r0, c1]
                     + fy * (1 - fx) * patch[r1, c0]
                     + fy * fx * patch[r1, c1])
                canvas[r, c] = <real>v
    return canvas_np


def bilinear_paste_backward(Py_ssize_t ph, Py_ssize_t pw, double x0, double y0,
                            double x1, double y1, real[:, ::1] gcanvas):
    cdef Py_ssize_t canvas_h = gcanvas.shape[0], canvas_w = gcanvas.shape[1]
    gpatch_acc = np.zeros((ph, pw), dtype=np.float64)
    cdef double[:, ::1] gp = gpatch_acc
    cdef Py_ssize_t r_lo = _span_lo(y0), r_hi = _span_hi(y1, canvas_h)
    cdef Py_ssize_t c_lo = _span_lo(x0), c_hi = _span_hi(x1, canvas_w)
    cdef Py_ssize_t r, c, r0, r1, c0, c1
    cdef double py, px, fy, fx, g
    if r_hi >= r_lo and c_hi >= c_lo:
        with nogil:
            for r in range(r_lo, r_hi + 1):
                py = (r + 0.5 - y0) / (y1 - y0) * ph
                _bil1d(py, ph, &r0, &r1, &fy)
                for c in range(c_lo, c_hi + 1):
                    px = (c + 0.5 - x0) / (x1 - x0) * pw
                    _bil1d(px, pw, &c0, &c1, &fx)
                    g = gcanvas[r, c]
                    gp[r0, c0] += (1 - fy) * (1 - fx) * g
                    gp[r0, c1] += (1 - fy) * fx * g
                    gp[r1, c0] += fy * (1 - fx) * g
                    gp[r1, c1] += fy * fx * g
    if real is float:
        return gpatch_acc.astype(np.float32)
    return gpatch_acc

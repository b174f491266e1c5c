"""Pure-numpy implementations of the hot kernels.

Reference backend; the compiled extension in ``_core.pyx`` mirrors these
semantics exactly. Coordinate convention throughout: pixel (r, c) occupies
the unit square [c, c+1) x [r, r+1) with its center at (c+0.5, r+0.5).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

name = "python"


def _axis_bilinear(coords, size):
    """Clamped bilinear indices and fractions for continuous coordinates.

    coords are positions in footprint space; returns (i0, i1, frac) such
    that value = (1-frac)*data[i0] + frac*data[i1], with edge replication
    outside [0.5, size-0.5].
    """
    u = np.clip(coords - 0.5, 0.0, float(size - 1))
    i0 = np.floor(u).astype(np.intp)
    np.minimum(i0, max(size - 2, 0), out=i0)
    frac = u - i0
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, frac


def conv2d_forward(xp, kern, stride):
    """Valid cross-correlation of a pre-padded input.

    xp: [Hp, Wp, Cin], kern: [k, k, Cin, Cout]. Output [oh, ow, Cout].
    """
    kh, kw = kern.shape[0], kern.shape[1]
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    # win: [oh, ow, Cin, kh, kw]; contract over (kh, kw, Cin)
    return np.tensordot(win, kern, axes=([3, 4, 2], [0, 1, 2]))


def conv2d_backward(xp, kern, stride, gy):
    """Gradients of conv2d_forward w.r.t. padded input and kernel."""
    kh, kw = kern.shape[0], kern.shape[1]
    oh, ow = gy.shape[0], gy.shape[1]
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    gkern = np.tensordot(win, gy, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
    gxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.tensordot(gy, kern[ki, kj], axes=([2], [1]))
            gxp[ki:ki + oh * stride:stride, kj:kj + ow * stride:stride] += contrib
    return gxp, np.ascontiguousarray(gkern)


def _crop_grid(x0, y0, x1, y1, out_h, out_w, src_h, src_w):
    xs = x0 + (np.arange(out_w) + 0.5) * (x1 - x0) / out_w
    ys = y0 + (np.arange(out_h) + 0.5) * (y1 - y0) / out_h
    c0, c1, fx = _axis_bilinear(xs, src_w)
    r0, r1, fy = _axis_bilinear(ys, src_h)
    return r0, r1, fy, c0, c1, fx


def bilinear_crop_forward(src, x0, y0, x1, y1, out_h, out_w):
    """Sample an out_h x out_w grid of cell centers inside the box.

    src: [H, W, C]. No coordinate rounding; samples outside the image
    replicate the border.
    """
    h, w = src.shape[0], src.shape[1]
    r0, r1, fy, c0, c1, fx = _crop_grid(x0, y0, x1, y1, out_h, out_w, h, w)
    s = src.astype(np.float64, copy=False)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    out = ((1 - fy) * (1 - fx) * s[r0[:, None], c0[None, :]]
           + (1 - fy) * fx * s[r0[:, None], c1[None, :]]
           + fy * (1 - fx) * s[r1[:, None], c0[None, :]]
           + fy * fx * s[r1[:, None], c1[None, :]])
    return out.astype(src.dtype, copy=False)


def bilinear_crop_backward(src_h, src_w, x0, y0, x1, y1, gy):
    """Scatter crop output gradients back onto the source grid."""
    out_h, out_w, ch = gy.shape
    r0, r1, fy, c0, c1, fx = _crop_grid(x0, y0, x1, y1, out_h, out_w, src_h, src_w)
    g = gy.astype(np.float64, copy=False)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    gsrc = np.zeros((src_h, src_w, ch), dtype=np.float64)
    np.add.at(gsrc, (r0[:, None], c0[None, :]), (1 - fy) * (1 - fx) * g)
    np.add.at(gsrc, (r0[:, None], c1[None, :]), (1 - fy) * fx * g)
    np.add.at(gsrc, (r1[:, None], c0[None, :]), fy * (1 - fx) * g)
    np.add.at(gsrc, (r1[:, None], c1[None, :]), fy * fx * g)
    return gsrc.astype(gy.dtype, copy=False)


def _paste_span(x0, x1, limit):
    lo = max(int(np.floor(x0)), 0)
    hi = min(int(np.floor(x1)), limit - 1)
    return lo, hi


def _paste_grid(x0, y0, x1, y1, canvas_h, canvas_w, ph, pw):
    c_lo, c_hi = _paste_span(x0, x1, canvas_w)
    r_lo, r_hi = _paste_span(y0, y1, canvas_h)
    xs = (np.arange(c_lo, c_hi + 1) + 0.5 - x0) / (x1 - x0) * pw
    ys = (np.arange(r_lo, r_hi + 1) + 0.5 - y0) / (y1 - y0) * ph
    c0, c1, fx = _axis_bilinear(xs, pw)
    r0, r1, fy = _axis_bilinear(ys, ph)
    return r_lo, r_hi, c_lo, c_hi, r0, r1, fy, c0, c1, fx


def bilinear_paste_forward(patch, x0, y0, x1, y1, canvas_h, canvas_w, fill):
    """Resize the patch onto the box footprint; fill everywhere else.

    patch: [ph, pw]. A canvas pixel belongs to the footprint when its
    index lies in [floor(x0), floor(x1)] x [floor(y0), floor(y1)].
    """
    ph, pw = patch.shape
    canvas = np.full((canvas_h, canvas_w), fill, dtype=patch.dtype)
    r_lo, r_hi, c_lo, c_hi, r0, r1, fy, c0, c1, fx = _paste_grid(
        x0, y0, x1, y1, canvas_h, canvas_w, ph, pw)
    if r_hi < r_lo or c_hi < c_lo:
        return canvas
    p = patch.astype(np.float64, copy=False)
    fy = fy[:, None]
    fx = fx[None, :]
    block = ((1 - fy) * (1 - fx) * p[r0[:, None], c0[None, :]]
             + (1 - fy) * fx * p[r0[:, None], c1[None, :]]
             + fy * (1 - fx) * p[r1[:, None], c0[None, :]]
             + fy * fx * p[r1[:, None], c1[None, :]])
    canvas[r_lo:r_hi + 1, c_lo:c_hi + 1] = block.astype(patch.dtype, copy=False)
    return canvas


def bilinear_paste_backward(ph, pw, x0, y0, x1, y1, gcanvas):
    """Gradient of bilinear_paste_forward w.r.t. the patch (fill is constant)."""
    canvas_h, canvas_w = gcanvas.shape
    r_lo, r_hi, c_lo, c_hi, r0, r1, fy, c0, c1, fx = _paste_grid(
        x0, y0, x1, y1, canvas_h, canvas_w, ph, pw)
    gpatch = np.zeros((ph, pw), dtype=np.float64)
    if r_hi < r_lo or c_hi < c_lo:
        return gpatch.astype(gcanvas.dtype, copy=False)
    g = gcanvas[r_lo:r_hi + 1, c_lo:c_hi + 1].astype(np.float64, copy=False)
    fy = fy[:, None]
    fx = fx[None, :]
    np.add.at(gpatch, (r0[:, None], c0[None, :]), (1 - fy) * (1 - fx) * g)
    np.add.at(gpatch, (r0[:, None], c1[None, :]), (1 - fy) * fx * g)
    np.add.at(gpatch, (r1[:, None], c0[None, :]), fy * (1 - fx) * g)
    np.add.at(gpatch, (r1[:, None], c1[None, :]), fy * fx * g)
    return gpatch.astype(gcanvas.dtype, copy=False)

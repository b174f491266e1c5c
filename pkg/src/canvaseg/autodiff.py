"""Reverse-mode autodiff over dense channels-last tensors.

Just enough machinery for the segmentation model: convolution, rectifier,
channel concatenation, bilinear crop/paste, per-pixel channel softmax and
weighted reductions. Tensors wrap a numpy array (float32 by default,
float64 for gradient checking); every op records a backward closure, and
``Tensor.backward()`` walks the graph in reverse topological order. The
heavy inner loops live in ``canvaseg._kernels``.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import _kernels as kernels

_GRAD_ENABLED = True
_CHECK_FINITE = os.environ.get("CANVASEG_CHECK_FINITE", "") == "1"


def set_finite_checks(enabled):
    """Toggle the all-finite assertion run after every forward op."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


@contextmanager
def no_grad():
    """Skip backward-graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A numpy array plus gradient plumbing."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(())[()])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"


def as_tensor(data, dtype=np.float32):
    if isinstance(data, Tensor):
        return data
    return Tensor(np.asarray(data, dtype=dtype))


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _CHECK_FINITE and not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite values in op output")
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn(out)
    return out


def _check_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(f"mixed tensor dtypes: {dt} vs {t.data.dtype}")
    return dt


def _same_pads(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x, kernel, stride=1, padding="same"):
    """Cross-correlate x[H,W,Cin] with kernel[k,k,Cin,Cout].

    padding "same" keeps ceil(size/stride) output cells (zeros outside),
    "valid" keeps only fully covered windows. k must be odd, stride >= 1.
    """
    _check_dtype(x, kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects x[H,W,Cin] and kernel[k,k,Cin,Cout]")
    k = kernel.data.shape[0]
    if kernel.data.shape[1] != k or k % 2 != 1:
        raise ValueError("kernel must be square with odd side")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x.data.shape[2] != kernel.data.shape[2]:
        raise ValueError(
            f"input channels {x.data.shape[2]} do not match kernel {kernel.data.shape[2]}")
    h, w = x.data.shape[0], x.data.shape[1]
    if padding == "same":
        pt, pb = _same_pads(h, k, stride)
        pl, pr = _same_pads(w, k, stride)
    elif padding == "valid":
        if h < k or w < k:
            raise ValueError("input smaller than kernel under valid padding")
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if pt or pb or pl or pr:
        xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0)))
    else:
        xp = x.data
    y = kernels.conv2d_forward(xp, kernel.data, stride)

    def backward_fn(out):
        def run():
            gxp, gk = kernels.conv2d_backward(
                xp, kernel.data, stride, np.ascontiguousarray(out.grad))
            if pt or pb or pl or pr:
                gxp = gxp[pt:pt + h, pl:pl + w]
            _accum(x, gxp)
            _accum(kernel, gk)
        return run

    return _make(y, (x, kernel), backward_fn)


def relu(x):
    y = np.maximum(x.data, 0)

    def backward_fn(out):
        def run():
            _accum(x, out.grad * (x.data > 0))
        return run

    return _make(y, (x,), backward_fn)


def add(a, b):
    """Elementwise sum; b may also be a [C] bias broadcast over [H,W,C]."""
    _check_dtype(a, b)
    bias_mode = b.data.ndim == 1 and a.data.ndim == 3 and a.data.shape[2] == b.data.shape[0]
    if not bias_mode and a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    y = a.data + b.data

    def backward_fn(out):
        def run():
            _accum(a, out.grad)
            if bias_mode:
                _accum(b, out.grad.sum(axis=(0, 1)))
            else:
                _accum(b, out.grad)
        return run

    return _make(y, (a, b), backward_fn)


def mul(a, b):
    _check_dtype(a, b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    y = a.data * b.data

    def backward_fn(out):
        def run():
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)
        return run

    return _make(y, (a, b), backward_fn)


def scale(x, c):
    c = float(c)
    y = x.data * x.data.dtype.type(c)

    def backward_fn(out):
        def run():
            _accum(x, out.grad * x.data.dtype.type(c))
        return run

    return _make(y, (x,), backward_fn)


def concat_channels(parts):
    """Concatenate [H,W,Ci] tensors along the channel axis."""
    parts = list(parts)
    _check_dtype(*parts)
    y = np.concatenate([p.data for p in parts], axis=2)
    splits = np.cumsum([p.data.shape[2] for p in parts])[:-1]

    def backward_fn(out):
        def run():
            for p, g in zip(parts, np.split(out.grad, splits, axis=2)):
                _accum(p, g)
        return run

    return _make(y, tuple(parts), backward_fn)


def stack_channels(planes):
    """Stack [H,W] tensors into [H,W,N]."""
    planes = list(planes)
    _check_dtype(*planes)
    y = np.stack([p.data for p in planes], axis=2)

    def backward_fn(out):
        def run():
            for i, p in enumerate(planes):
                _accum(p, out.grad[:, :, i])
        return run

    return _make(y, tuple(planes), backward_fn)


def bilinear_crop(src, box, out_h, out_w):
    """RoI crop: bilinear samples on an out_h x out_w cell-center grid in box.

    box is (x0, y0, x1, y1) in continuous image coordinates. Differentiable
    w.r.t. src only.
    """
    x0, y0, x1, y1 = (float(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate box {box}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    if src.data.ndim != 3:
        raise ValueError("bilinear_crop expects src[H,W,C]")
    h, w = src.data.shape[0], src.data.shape[1]
    y = kernels.bilinear_crop_forward(src.data, x0, y0, x1, y1, out_h, out_w)

    def backward_fn(out):
        def run():
            g = kernels.bilinear_crop_backward(
                h, w, x0, y0, x1, y1, np.ascontiguousarray(out.grad))
            _accum(src, g)
        return run

    return _make(y, (src,), backward_fn)


def bilinear_paste(patch, box, canvas_h, canvas_w, fill):
    """Resize patch[h,w] onto the box footprint of a canvas; fill elsewhere.

    The fill is a constant: gradient flows only to the patch.
    """
    x0, y0, x1, y1 = (float(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate box {box}")
    if patch.data.ndim != 2:
        raise ValueError("bilinear_paste expects patch[h,w]")
    ph, pw = patch.data.shape
    y = kernels.bilinear_paste_forward(
        patch.data, x0, y0, x1, y1, canvas_h, canvas_w, float(fill))

    def backward_fn(out):
        def run():
            g = kernels.bilinear_paste_backward(
                ph, pw, x0, y0, x1, y1, np.ascontiguousarray(out.grad))
            _accum(patch, g)
        return run

    return _make(y, (patch,), backward_fn)


def channel_softmax(x):
    """Per-pixel softmax over the last axis of [H,W,N], max-subtracted."""
    if x.data.ndim != 3:
        raise ValueError("channel_softmax expects [H,W,N]")
    shifted = x.data - x.data.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=2, keepdims=True)

    def backward_fn(out):
        def run():
            dot = (out.grad * y).sum(axis=2, keepdims=True)
            _accum(x, (out.grad - dot) * y)
        return run

    return _make(y, (x,), backward_fn)


def gather_channels(x, index):
    """Pick x[r,c,index[r,c]] per pixel; index is a 0-based [H,W] int map."""
    idx = np.asarray(index)
    h, w, n = x.data.shape
    if idx.shape != (h, w):
        raise ValueError("index shape must match spatial dims")
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError("channel index out of range")
    rr, cc = np.ogrid[:h, :w]
    y = x.data[rr, cc, idx]

    def backward_fn(out):
        def run():
            g = np.zeros_like(x.data)
            g[rr, cc, idx] = out.grad
            _accum(x, g)
        return run

    return _make(y, (x,), backward_fn)


def clamped_log(x, floor=1e-12):
    """log(max(x, floor)); clamped entries get zero gradient."""
    clamped = np.maximum(x.data, x.data.dtype.type(floor))
    y = np.log(clamped)
    mask = x.data > floor

    def backward_fn(out):
        def run():
            _accum(x, out.grad * mask / clamped)
        return run

    return _make(y, (x,), backward_fn)


def sigmoid_bce_with_logits(logits, targets):
    """Elementwise binary cross entropy on logits, evaluated stably."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise ValueError("target shape must match logits")
    z = logits.data
    y = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward_fn(out):
        def run():
            # exp of a non-positive argument cannot overflow
            ez = np.exp(-np.abs(z))
            sig = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
            _accum(logits, out.grad * (sig - t))
        return run

    return _make(y, (logits,), backward_fn)


def sum_all(x):
    y = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward_fn(out):
        def run():
            _accum(x, np.broadcast_to(out.grad, x.data.shape))
        return run

    return _make(y, (x,), backward_fn)


def mean_all(x):
    n = x.data.size
    y = np.asarray(x.data.sum() / n, dtype=x.data.dtype)

    def backward_fn(out):
        def run():
            _accum(x, np.broadcast_to(out.grad / n, x.data.shape))
        return run

    return _make(y, (x,), backward_fn)


def add_n(tensors):
    """Sum a list of same-shape tensors."""
    tensors = list(tensors)
    _check_dtype(*tensors)
    y = tensors[0].data.copy()
    for t in tensors[1:]:
        y += t.data

    def backward_fn(out):
        def run():
            for t in tensors:
                _accum(t, out.grad)
        return run

    return _make(y, tuple(tensors), backward_fn)


def gradient_check(loss_fn, params, epsilon=1e-5):
    """Max relative error of reverse-mode grads vs central differences.

    loss_fn(params) must rebuild the graph and return a scalar Tensor;
    the relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for p in params:
        p.zero_grad()
    loss = loss_fn(params)
    if not np.isfinite(loss.item()):
        raise FloatingPointError("non-finite loss in gradient_check")
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    def eval_loss():
        with no_grad():
            return loss_fn(params).item()

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            f_plus = eval_loss()
            flat[i] = saved - epsilon
            f_minus = eval_loss()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2 * epsilon)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst

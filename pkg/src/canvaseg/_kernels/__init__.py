"""Hot-kernel dispatch across a compiled extension and a numpy fallback.

Both backends implement the same six entry points and are kept
interchangeable by parity tests. benchmarks/bench_kernels.py shows they
win in different places: BLAS-backed numpy is several times faster at
convolution, while the compiled extension is 3-4x faster at the bilinear
crop/paste kernels whose per-sample coordinate math numpy cannot fuse.
The default "auto" backend therefore routes each op to the faster side.

Set CANVASEG_KERNELS=python|compiled|auto to force a choice at import;
``set_backend`` swaps at runtime (tests and benchmarks only - not thread
safe).
"""

import os

from . import python_ref

_OPS = (
    "conv2d_forward", "conv2d_backward",
    "bilinear_crop_forward", "bilinear_crop_backward",
    "bilinear_paste_forward", "bilinear_paste_backward",
)

_BACKENDS = {"python": python_ref}

try:
    from . import _core
    _BACKENDS["compiled"] = _core
except ImportError:
    _core = None


class _AutoBackend:
    name = "auto"

    def __init__(self, bilinear_mod):
        self.conv2d_forward = python_ref.conv2d_forward
        self.conv2d_backward = python_ref.conv2d_backward
        for op in _OPS[2:]:
            setattr(self, op, getattr(bilinear_mod, op))


_BACKENDS["auto"] = _AutoBackend(_core if _core is not None else python_ref)

_forced = os.environ.get("CANVASEG_KERNELS", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"CANVASEG_KERNELS={_forced!r} requested but that backend is "
            f"unavailable (have: {sorted(_BACKENDS)})")
    _active = _BACKENDS[_forced]
else:
    _active = _BACKENDS["auto"]


def get_backend():
    return _active.name


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r} (have: {sorted(_BACKENDS)})")
    _active = _BACKENDS[name]


def conv2d_forward(xp, kern, stride):
    return _active.conv2d_forward(xp, kern, stride)


def conv2d_backward(xp, kern, stride, gy):
    return _active.conv2d_backward(xp, kern, stride, gy)


def bilinear_crop_forward(src, x0, y0, x1, y1, out_h, out_w):
    return _active.bilinear_crop_forward(src, x0, y0, x1, y1, out_h, out_w)


def bilinear_crop_backward(src_h, src_w, x0, y0, x1, y1, gy):
    return _active.bilinear_crop_backward(src_h, src_w, x0, y0, x1, y1, gy)


def bilinear_paste_forward(patch, x0, y0, x1, y1, canvas_h, canvas_w, fill):
    return _active.bilinear_paste_forward(patch, x0, y0, x1, y1, canvas_h, canvas_w, fill)


def bilinear_paste_backward(ph, pw, x0, y0, x1, y1, gcanvas):
    return _active.bilinear_paste_backward(ph, pw, x0, y0, x1, y1, gcanvas)

"""Versioned binary model checkpoints.

Layout (all integers little-endian uint32, all floats little-endian
float32):

    magic   4 bytes         b"CSEG"
    version u32             currently 1
    config block:
        channels, reduction, roi_size, logit_size     4 x u32
        head_convs, head_convs_before_resize          2 x u32
        n_backbone_strides, then each stride          u32 each
    tensor block, in fixed order (backbone kernels, backbone biases,
    head kernels, head biases; each list in layer order):
        ndim    u32
        dims    ndim x u32
        data    prod(dims) x f32

Round-trips are bitwise: load(save(params)) compares equal array-for-array.
"""

import io
import struct

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams

MAGIC = b"CSEG"
VERSION = 1


def _write_u32(buf, *values):
    for v in values:
        buf.write(struct.pack("<I", v))


def _read_u32(buf, count=1):
    raw = buf.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated checkpoint")
    vals = struct.unpack(f"<{count}I", raw)
    return vals[0] if count == 1 else vals


def _write_tensor(buf, tensor):
    arr = np.ascontiguousarray(tensor.data, dtype="<f4")
    _write_u32(buf, arr.ndim, *arr.shape)
    buf.write(arr.tobytes())


def _read_tensor(buf, requires_grad=True):
    ndim = _read_u32(buf)
    shape = tuple(_read_u32(buf) for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = buf.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated checkpoint")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return ad.Tensor(arr, requires_grad=requires_grad)


def save_params(params, path):
    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_u32(buf, VERSION)
    cfg = params.config
    _write_u32(buf, cfg.channels, cfg.reduction, cfg.roi_size, cfg.logit_size,
               cfg.head_convs, cfg.head_convs_before_resize,
               len(cfg.backbone_strides), *cfg.backbone_strides)
    for t in params.all_tensors():
        _write_tensor(buf, t)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_params(path):
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(4) != MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    version = _read_u32(buf)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    channels, reduction, roi, logit, head_convs, before = _read_u32(buf, 6)
    n_strides = _read_u32(buf)
    strides = tuple(_read_u32(buf) for _ in range(n_strides))
    cfg = ModelConfig(
        channels=channels, reduction=reduction, roi_size=roi, logit_size=logit,
        backbone_strides=strides, head_convs=head_convs,
        head_convs_before_resize=before)
    n_backbone = len(cfg.backbone_layers())
    n_head = len(cfg.head_layers())
    bk = [_read_tensor(buf) for _ in range(n_backbone)]
    bb = [_read_tensor(buf) for _ in range(n_backbone)]
    hk = [_read_tensor(buf) for _ in range(n_head)]
    hb = [_read_tensor(buf) for _ in range(n_head)]
    if buf.read(1):
        raise ValueError("trailing bytes after checkpoint payload")
    params = ModelParams(cfg, bk, bb, hk, hb)
    for tensor, (k, cin, cout, _s) in zip(bk + hk, cfg.backbone_layers() + cfg.head_layers()):
        if tensor.data.shape != (k, k, cin, cout):
            raise ValueError(
                f"kernel shape {tensor.data.shape} does not match config {(k, k, cin, cout)}")
    return params

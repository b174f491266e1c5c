"""Joint segmentation model: all regions compete for every pixel.

One backbone pass turns the image into a shared feature map. Each region
gets a small head: its box crops RoI features, the cropped positive and
negative annotation channels are concatenated, and a few convolutions plus
a bilinear upsample produce a logit patch. Patches are pasted back onto a
common canvas (fill -10000 outside the box) and a per-pixel softmax makes
the regions compete. Training minimizes either the box-size-weighted
cross entropy on that canvas or, as a baseline, an independent per-region
BCE that never lets regions interact.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import Box, RegionAnnotationPair, AnnotationMap

log = logging.getLogger(__name__)

CANVAS_FILL = -10000.0
PROB_FLOOR = 1e-12

# observability counters; tests assert on them
backbone_calls = 0
clamp_events = 0


def consume_clamp_events():
    """Return and reset the count of probability-floor hits in the loss."""
    global clamp_events
    n, clamp_events = clamp_events, 0
    return n


@dataclass(frozen=True)
class ModelConfig:
    """Shape bookkeeping for backbone and head.

    channels: feature width C; reduction: total backbone downscale r;
    roi_size: side of the cropped RoI grid; logit_size: side of each
    region's logit patch. The backbone is len(backbone_strides) conv
    layers of kernel 3, all at `channels` width; the head runs
    head_convs_before_resize convs at roi_size, upsamples bilinearly to
    logit_size, runs the remaining convs, and finishes with a 1x1 conv
    to a single logit channel.
    """

    channels: int = 16
    reduction: int = 4
    roi_size: int = 17
    logit_size: int = 33
    backbone_strides: tuple = (2, 1, 2, 1)
    head_convs: int = 3  # 3x3 convs in the head before the final 1x1
    head_convs_before_resize: int = 2

    def __post_init__(self):
        prod = 1
        for s in self.backbone_strides:
            prod *= s
        if prod != self.reduction:
            raise ValueError(
                f"backbone strides {self.backbone_strides} produce reduction "
                f"{prod}, config says {self.reduction}")
        if not 0 <= self.head_convs_before_resize <= self.head_convs:
            raise ValueError("head resize position out of range")

    def backbone_layers(self):
        """(kernel, cin, cout, stride) per backbone conv."""
        specs = []
        cin = 3
        for s in self.backbone_strides:
            specs.append((3, cin, self.channels, s))
            cin = self.channels
        return specs

    def head_layers(self):
        """(kernel, cin, cout, stride) per head conv, final 1x1 included."""
        specs = []
        cin = self.channels + 2
        for _ in range(self.head_convs):
            specs.append((3, cin, self.channels, 1))
            cin = self.channels
        specs.append((1, cin, 1, 1))
        return specs


# the small config used for finite-difference checks: well under 5k params
GRADCHECK_CONFIG = ModelConfig(
    channels=4, reduction=2, roi_size=5, logit_size=9,
    backbone_strides=(2, 1), head_convs=3, head_convs_before_resize=2)


@dataclass
class ModelParams:
    config: ModelConfig
    backbone_kernels: list
    backbone_biases: list
    head_kernels: list
    head_biases: list

    def all_tensors(self):
        return (self.backbone_kernels + self.backbone_biases
                + self.head_kernels + self.head_biases)

    def count(self):
        return sum(t.data.size for t in self.all_tensors())

    def copy(self):
        """Fresh tensors with the same values, so fine-tuning a copy
        leaves the original untouched."""
        def dup(tensors):
            return [ad.Tensor(t.data.copy(), requires_grad=t.requires_grad)
                    for t in tensors]
        return ModelParams(self.config, dup(self.backbone_kernels),
                           dup(self.backbone_biases), dup(self.head_kernels),
                           dup(self.head_biases))


def init_params(config, seed, dtype=np.float32):
    """He-scaled kernels, zero biases; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    bk, bb, hk, hb = [], [], [], []
    for (k, cin, cout, _s) in config.backbone_layers():
        scale = np.sqrt(2.0 / (k * k * cin))
        bk.append(ad.Tensor(
            (rng.standard_normal((k, k, cin, cout)) * scale).astype(dtype),
            requires_grad=True))
        bb.append(ad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True))
    for (k, cin, cout, _s) in config.head_layers():
        scale = np.sqrt(2.0 / (k * k * cin))
        hk.append(ad.Tensor(
            (rng.standard_normal((k, k, cin, cout)) * scale).astype(dtype),
            requires_grad=True))
        hb.append(ad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True))
    return ModelParams(config, bk, bb, hk, hb)


# ------------------------------------------------------------ domain types

@dataclass(frozen=True)
class RegionLabelMap:
    """Per-pixel region index in 1..N; every region present."""

    labels: np.ndarray

    def __post_init__(self):
        lab = self.labels
        if lab.ndim != 2 or not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be an integer [H,W] array")
        lo = int(lab.min())
        if lo < 1:
            raise ValueError("region indices start at 1")
        present = np.unique(lab)
        if len(present) != int(lab.max()):
            missing = sorted(set(range(1, int(lab.max()) + 1)) - set(present.tolist()))
            raise ValueError(f"regions {missing} have no pixels")

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def n_regions(self):
        return int(self.labels.max())

    def region_mask(self, region_id):
        return (self.labels == region_id).astype(np.uint8)


@dataclass(frozen=True)
class LogitCanvas:
    tensor: ad.Tensor  # [H,W,N]

    @property
    def n_regions(self):
        return self.tensor.shape[2]


@dataclass(frozen=True)
class ProbCanvas:
    tensor: ad.Tensor  # [H,W,N], channels sum to 1 per pixel

    @property
    def n_regions(self):
        return self.tensor.shape[2]


@dataclass(frozen=True)
class Segmentation:
    labels: np.ndarray  # [H,W] int32 in 1..N


@dataclass(frozen=True)
class WeightMap:
    values: np.ndarray  # [H,W], strictly positive


@dataclass(frozen=True)
class AnnotatedImage:
    """One training example: image, ground truth, per-region annotations."""

    image: np.ndarray  # [H,W,3] float32
    labels: RegionLabelMap
    boxes: list  # Box per region, region order
    pairs: list  # RegionAnnotationPair per region

    def __post_init__(self):
        n = self.labels.n_regions
        if len(self.boxes) != n or len(self.pairs) != n:
            raise ValueError(
                f"{n} regions but {len(self.boxes)} boxes / {len(self.pairs)} pairs")


def apply_sharing(pairs, sharing):
    """shared: keep Eq.-style negatives; unshared: zero every negative channel."""
    if sharing == "shared":
        return list(pairs)
    if sharing != "unshared":
        raise ValueError(f"unknown sharing mode {sharing!r}")
    return [
        RegionAnnotationPair(
            p.positive,
            AnnotationMap(np.zeros_like(p.negative.mask)))
        for p in pairs
    ]


# ---------------------------------------------------------------- forward

def backbone_forward(image, params):
    """Shared conv stack; call once per image (counted)."""
    global backbone_calls
    backbone_calls += 1
    cfg = params.config
    h, w = image.shape[0], image.shape[1]
    if h % cfg.reduction or w % cfg.reduction:
        raise ValueError(
            f"image {w}x{h} not divisible by reduction {cfg.reduction}")
    x = image
    for kern, bias, (_k, _cin, _cout, stride) in zip(
            params.backbone_kernels, params.backbone_biases, cfg.backbone_layers()):
        x = ad.relu(ad.add(ad.conv2d(x, kern, stride=stride, padding="same"), bias))
    return x


def region_head_forward(features, box, ann_pair, params):
    """RoI crop + annotation channels -> logit patch for one region."""
    cfg = params.config
    r = float(cfg.reduction)
    feat_box = (box.x0 / r, box.y0 / r, box.x1 / r, box.y1 / r)
    roi = ad.bilinear_crop(features, feat_box, cfg.roi_size, cfg.roi_size)
    ann = ad.bilinear_crop(
        ad.Tensor(ann_pair.as_array().astype(features.dtype)),
        box.as_tuple(), cfg.roi_size, cfg.roi_size)
    x = ad.concat_channels([roi, ann])
    n_convs = len(params.head_kernels)
    for i, (kern, bias) in enumerate(zip(params.head_kernels, params.head_biases)):
        if i == cfg.head_convs_before_resize:
            side = float(x.shape[0])
            x = ad.bilinear_crop(x, (0.0, 0.0, side, side),
                                 cfg.logit_size, cfg.logit_size)
        x = ad.add(ad.conv2d(x, kern, stride=1, padding="same"), bias)
        if i < n_convs - 1:  # final 1x1 conv stays linear
            x = ad.relu(x)
    return ad.gather_channels(x, np.zeros((cfg.logit_size, cfg.logit_size), dtype=int))


def project_to_canvas(logit_maps, boxes, width, height):
    """Paste each region's logit patch into its box; fill elsewhere."""
    if len(logit_maps) != len(boxes):
        raise ValueError(f"{len(logit_maps)} logit maps vs {len(boxes)} boxes")
    planes = [
        ad.bilinear_paste(patch, box.as_tuple(), height, width, fill=CANVAS_FILL)
        for patch, box in zip(logit_maps, boxes)
    ]
    return LogitCanvas(ad.stack_channels(planes))


def canvas_probabilities(canvas):
    return ProbCanvas(ad.channel_softmax(canvas.tensor))


def forward_logits(image, boxes, pairs, params, sharing="shared"):
    """Full forward pass to per-region logit patches plus the canvas."""
    if not boxes:
        raise ValueError("at least one region required")
    if len(boxes) != len(pairs):
        raise ValueError(f"{len(boxes)} boxes vs {len(pairs)} annotation pairs")
    pairs = apply_sharing(pairs, sharing)
    features = backbone_forward(image, params)
    patches = [
        region_head_forward(features, box, pair, params)
        for box, pair in zip(boxes, pairs)
    ]
    canvas = project_to_canvas(
        patches, boxes, image.shape[1], image.shape[0])
    return patches, canvas


# ----------------------------------------------------------------- losses

def pixel_weights(boxes, width, height):
    """1 / area of the smallest covering box; 1/(W*H) where none covers."""
    smallest = np.full((height, width), np.inf)
    for box in boxes:
        r0, r1, c0, c1 = box.covered_span(width, height)
        if r0 <= r1 and c0 <= c1:
            view = smallest[r0:r1 + 1, c0:c1 + 1]
            np.minimum(view, box.area, out=view)
    values = 1.0 / smallest
    values[~np.isfinite(smallest)] = 1.0 / (width * height)
    return WeightMap(values)


def pixelwise_loss(probs, label_map, weights):
    """Box-weighted cross entropy summed over the shared canvas."""
    global clamp_events
    n = probs.n_regions
    if label_map.n_regions > n:
        raise ValueError(
            f"labels reference region {label_map.n_regions} but canvas has {n}")
    picked = ad.gather_channels(probs.tensor, label_map.labels - 1)
    clamped = int(np.count_nonzero(picked.data < PROB_FLOOR))
    if clamped:
        clamp_events += clamped
        log.warning("pixelwise loss clamped %d zero probabilities", clamped)
    w = ad.Tensor(np.asarray(weights.values, dtype=picked.dtype))
    nll = ad.scale(ad.mul(w, ad.clamped_log(picked, PROB_FLOOR)), -1.0)
    return ad.sum_all(nll)


def bce_target_patch(label_map, region_id, box, side, dtype=np.float32):
    """Downsampled binary ground truth: crop the indicator, threshold at 0.5."""
    indicator = label_map.region_mask(region_id).astype(dtype)[:, :, None]
    with ad.no_grad():
        crop = ad.bilinear_crop(ad.Tensor(indicator), box.as_tuple(), side, side)
    return (crop.data[:, :, 0] > 0.5).astype(dtype)


def maskwise_bce_loss(logit_maps, boxes, label_map):
    """Independent per-region BCE; mean over the patch, summed over regions."""
    if len(logit_maps) != len(boxes):
        raise ValueError(f"{len(logit_maps)} logit maps vs {len(boxes)} boxes")
    terms = []
    for region_id, (patch, box) in enumerate(zip(logit_maps, boxes), start=1):
        target = bce_target_patch(
            label_map, region_id, box, patch.shape[0], dtype=patch.dtype)
        terms.append(ad.mean_all(ad.sigmoid_bce_with_logits(patch, target)))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def example_loss(example, params, loss_mode, sharing):
    """Forward one annotated image and evaluate its training loss.

    The pixel-wise sum is divided by the region count here so per-image
    loss magnitudes stay comparable across scenes with different N (a
    positive rescale; the per-image gradient direction is unchanged).
    """
    dtype = params.backbone_kernels[0].data.dtype
    image = ad.Tensor(np.asarray(example.image, dtype=dtype))
    patches, canvas = forward_logits(
        image, example.boxes, example.pairs, params, sharing)
    if loss_mode == "pixelwise":
        probs = canvas_probabilities(canvas)
        weights = pixel_weights(
            example.boxes, example.labels.width, example.labels.height)
        loss = pixelwise_loss(probs, example.labels, weights)
        return ad.scale(loss, 1.0 / len(example.boxes))
    if loss_mode == "maskwise":
        return maskwise_bce_loss(patches, example.boxes, example.labels)
    raise ValueError(f"unknown loss mode {loss_mode!r}")


class MomentumSGD:
    """Plain SGD with momentum 0.9 over a fixed parameter list."""

    def __init__(self, tensors, learning_rate, momentum=0.9):
        self.tensors = list(tensors)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(t.data) for t in self.tensors]

    def step(self):
        for t, v in zip(self.tensors, self.velocity):
            if t.grad is None:
                continue
            v *= self.momentum
            v += t.grad
            t.data -= (self.learning_rate * v).astype(t.data.dtype)

    def zero_grad(self):
        for t in self.tensors:
            t.zero_grad()


def train_step(batch, params, optimizer, loss_mode, sharing):
    """One gradient step over a batch; aborts untouched on non-finite loss."""
    optimizer.zero_grad()
    losses = [example_loss(ex, params, loss_mode, sharing) for ex in batch]
    total = losses[0]
    for t in losses[1:]:
        total = ad.add(total, t)
    mean = ad.scale(total, 1.0 / len(batch))
    value = mean.item()
    if not np.isfinite(value):
        log.error("non-finite %s loss %r; step aborted", loss_mode, value)
        raise FloatingPointError(f"non-finite {loss_mode} loss")
    mean.backward()
    optimizer.step()
    return value


# -------------------------------------------------------------- inference

def predict_segmentation(image, boxes, pairs, params, sharing="shared"):
    """Argmax over the probability canvas; ties go to the lowest index."""
    with ad.no_grad():
        if not isinstance(image, ad.Tensor):
            dtype = params.backbone_kernels[0].data.dtype
            image = ad.Tensor(np.asarray(image, dtype=dtype))
        _patches, canvas = forward_logits(image, boxes, pairs, params, sharing)
        probs = canvas_probabilities(canvas)
    labels = np.argmax(probs.tensor.data, axis=2).astype(np.int32) + 1
    return Segmentation(labels), probs


def mean_region_iou(pred, label_map):
    """Mean intersection-over-union across ground-truth regions."""
    per_region = []
    for i in range(1, label_map.n_regions + 1):
        gt = label_map.labels == i
        if not gt.any():
            raise ValueError(f"region {i} absent from ground truth")
        pr = pred.labels == i
        union = int(np.logical_or(gt, pr).sum())
        inter = int(np.logical_and(gt, pr).sum())
        per_region.append(inter / union)
    return float(np.mean(per_region)), per_region

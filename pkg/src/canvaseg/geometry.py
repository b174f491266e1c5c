"""Annotation primitives and their rasterization onto the image grid.

Extreme points become boxes and clicked discs, scribbles become smooth
three-point strokes, and per-region binary annotation maps combine into
the positive/negative channel pair every region is conditioned on: the
positive channel is the region's own map, the negative channel is the
saturated union of everyone else's. Coordinates are continuous pixel
coordinates with (x, y) = (column, row); pixel (r, c) has center
(c + 0.5, r + 0.5).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DISC_RADIUS_SQ = 9.0  # clicked disc: integer offsets with dx^2+dy^2 <= 9 (29 pixels)
STAMP_HALF = 1  # scribble strokes stamp 3x3 squares
SAMPLES_PER_UNIT = 8  # stroke sampling density, comfortably past convergence


@dataclass(frozen=True)
class Point:
    x: int
    y: int

    def inside(self, width, height):
        return 0 <= self.x < width and 0 <= self.y < height


@dataclass(frozen=True)
class Box:
    """Continuous coordinate box; never degenerate."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box ({self.x0},{self.y0},{self.x1},{self.y1})")

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def covered_span(self, width, height):
        """Index ranges (r0, r1, c0, c1), inclusive, of pixels the box paints.

        A pixel is covered when its index cell intersects the closed box:
        rows floor(y0)..floor(y1), columns floor(x0)..floor(x1), clamped.
        The paste, containment-weight, and service code all share this rule.
        """
        r0 = max(int(np.floor(self.y0)), 0)
        r1 = min(int(np.floor(self.y1)), height - 1)
        c0 = max(int(np.floor(self.x0)), 0)
        c1 = min(int(np.floor(self.x1)), width - 1)
        return r0, r1, c0, c1

    def covers(self, width, height):
        """Boolean [H,W] map of covered pixels."""
        out = np.zeros((height, width), dtype=bool)
        r0, r1, c0, c1 = self.covered_span(width, height)
        if r0 <= r1 and c0 <= c1:
            out[r0:r1 + 1, c0:c1 + 1] = True
        return out


@dataclass(frozen=True)
class ExtremePoints:
    left: Point
    right: Point
    top: Point
    bottom: Point

    def validate(self, width, height):
        for p in (self.left, self.right, self.top, self.bottom):
            if not p.inside(width, height):
                raise ValueError(f"extreme point {p} outside {width}x{height} image")
        if self.left.x > self.right.x or self.top.y > self.bottom.y:
            raise ValueError("extreme points out of order")


@dataclass(frozen=True)
class Scribble:
    """Three ordered control points; the curve interpolates all of them."""

    control_points: tuple
    region_id: int

    def __post_init__(self):
        if len(self.control_points) != 3:
            raise ValueError("a scribble has exactly 3 control points")


@dataclass(frozen=True)
class AnnotationMap:
    mask: np.ndarray  # uint8 [H,W], values 0/1

    def __post_init__(self):
        if self.mask.ndim != 2 or self.mask.dtype != np.uint8:
            raise ValueError("mask must be a uint8 [H,W] array")

    @property
    def width(self):
        return self.mask.shape[1]

    @property
    def height(self):
        return self.mask.shape[0]

    @classmethod
    def empty(cls, width, height):
        return cls(np.zeros((height, width), dtype=np.uint8))

    def union(self, other):
        return AnnotationMap(np.maximum(self.mask, other.mask))


@dataclass(frozen=True)
class RegionAnnotationPair:
    positive: AnnotationMap
    negative: AnnotationMap

    def as_array(self):
        """float32 [H,W,2]: positive channel first."""
        return np.stack(
            [self.positive.mask, self.negative.mask], axis=2).astype(np.float32)


def box_from_extreme_points(ep, margin_fraction, width, height):
    """Tight box through the extreme points, margin per side, clamped.

    A degenerate axis (single-pixel extent) grows symmetrically to a
    3-pixel extent before clamping.
    """
    ep.validate(width, height)
    x0, x1 = float(ep.left.x), float(ep.right.x)
    y0, y1 = float(ep.top.y), float(ep.bottom.y)
    x0, x1 = _expand_axis(x0, x1, margin_fraction)
    y0, y1 = _expand_axis(y0, y1, margin_fraction)
    return Box(
        max(x0, 0.0), max(y0, 0.0),
        min(x1, width - 1.0), min(y1, height - 1.0))


def _expand_axis(lo, hi, margin_fraction):
    extent = hi - lo
    lo -= margin_fraction * extent
    hi += margin_fraction * extent
    if hi - lo < 3.0:
        center = (lo + hi) / 2.0
        lo, hi = center - 1.5, center + 1.5
    return lo, hi


def stamp_disc(mask, center):
    """Set pixels within Euclidean distance 3 of center (inclusive rule)."""
    h, w = mask.shape
    cx, cy = center
    for dy in range(-3, 4):
        y = cy + dy
        if not 0 <= y < h:
            continue
        for dx in range(-3, 4):
            if dx * dx + dy * dy <= DISC_RADIUS_SQ:
                x = cx + dx
                if 0 <= x < w:
                    mask[y, x] = 1


def rasterize_extreme_points(ep, width, height):
    """Union of the four clicked discs, clipped at image borders."""
    ep.validate(width, height)
    mask = np.zeros((height, width), dtype=np.uint8)
    for p in (ep.left, ep.right, ep.top, ep.bottom):
        stamp_disc(mask, (p.x, p.y))
    return AnnotationMap(mask)


def bezier_through(p0, p_mid, p2):
    """Control point of the quadratic bezier interpolating p_mid at t=0.5."""
    p0 = np.asarray(p0, dtype=np.float64)
    p_mid = np.asarray(p_mid, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    return 2.0 * p_mid - 0.5 * (p0 + p2)


def _bezier_points(p0, q, p2, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * q + t ** 2 * p2


def curve_length(p0, p_mid, p2):
    q = bezier_through(p0, p_mid, p2)
    pts = _bezier_points(np.asarray(p0, float), q, np.asarray(p2, float), 129)
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def _stamp_square(mask, cx, cy):
    h, w = mask.shape
    mask[max(cy - STAMP_HALF, 0):min(cy + STAMP_HALF + 1, h),
         max(cx - STAMP_HALF, 0):min(cx + STAMP_HALF + 1, w)] = 1


def rasterize_scribble(s, width, height, samples_per_unit=SAMPLES_PER_UNIT):
    """3-pixel-wide stroke: 3x3 stamps along the sampled bezier."""
    p0, p_mid, p2 = (np.asarray(p, dtype=np.float64) for p in s.control_points)
    for p in (p0, p_mid, p2):
        if not (0 <= p[0] < width and 0 <= p[1] < height):
            raise ValueError(f"control point {tuple(p)} outside {width}x{height} image")
    q = bezier_through(p0, p_mid, p2)
    length = curve_length(p0, p_mid, p2)
    n = max(9, int(np.ceil(samples_per_unit * length)) + 1)
    mask = np.zeros((height, width), dtype=np.uint8)
    for x, y in _bezier_points(p0, q, p2, n):
        _stamp_square(mask, int(round(x)), int(round(y)))
    return AnnotationMap(mask)


def rasterize_polyline(points, width, height):
    """3-pixel-wide stroke along straight segments (interactive strokes)."""
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    if not pts:
        raise ValueError("empty polyline")
    for p in pts:
        if not (0 <= p[0] < width and 0 <= p[1] < height):
            raise ValueError(f"polyline point {tuple(p)} outside {width}x{height} image")
    mask = np.zeros((height, width), dtype=np.uint8)
    _stamp_square(mask, int(round(pts[0][0])), int(round(pts[0][1])))
    for a, b in zip(pts, pts[1:]):
        seg = float(np.hypot(*(b - a)))
        n = max(2, int(np.ceil(SAMPLES_PER_UNIT * seg)) + 1)
        for t in np.linspace(0.0, 1.0, n):
            p = (1 - t) * a + t * b
            _stamp_square(mask, int(round(p[0])), int(round(p[1])))
    return AnnotationMap(mask)


def build_region_annotation_pair(region_id, all_annotations):
    """Pair a region's own map with the saturated union of all others.

    region_id is 1-based; all_annotations holds one map per region in
    region order.
    """
    if not all_annotations:
        raise ValueError("no annotation maps")
    if not 1 <= region_id <= len(all_annotations):
        raise ValueError(f"region_id {region_id} out of range 1..{len(all_annotations)}")
    positive = all_annotations[region_id - 1]
    negative = np.zeros_like(positive.mask)
    for j, other in enumerate(all_annotations, start=1):
        if j != region_id:
            negative = np.maximum(negative, other.mask)
    return RegionAnnotationPair(positive, AnnotationMap(negative))


def crop_annotation_map(pair, box, out_h, out_w):
    """Bilinear RoI crop of the 2-channel annotation pair."""
    return ad.bilinear_crop(
        ad.Tensor(pair.as_array()), box.as_tuple(), out_h, out_w)

"""Simulated annotator: extreme points, error mining, corrective scribbles.

The simulator stands in for a human during training and evaluation. It
clicks extremal pixels of each ground-truth region, finds connected groups
of mislabeled pixels in the current prediction, scores each group by the
exact IoU gain its correction would yield, and draws smooth three-point
strokes that start at the group's border and stay inside the true region.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (
    ExtremePoints, Point, Scribble, build_region_annotation_pair,
    rasterize_scribble,
)
from .model import Segmentation, mean_region_iou, predict_segmentation

log = logging.getLogger(__name__)

SCRIBBLE_ATTEMPTS = 10

FIXED_ONE_PER_REGION = "fixed_one_per_region"
FREE_BUDGET = "free_budget"


@dataclass(frozen=True)
class ErrorRegion:
    """One 4-connected group of pixels wrongly taken from a true region.

    pixels is an int array [K, 2] of (row, col) in scan order; importance
    is the mean-IoU gain if every pixel were reassigned to gt_region_id.
    """

    gt_region_id: int
    pixels: np.ndarray
    importance: float

    @property
    def size(self):
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class AllocationStrategy:
    mode: str
    budget_per_round: int = 1

    def __post_init__(self):
        if self.mode not in (FIXED_ONE_PER_REGION, FREE_BUDGET):
            raise ValueError(f"unknown allocation mode {self.mode!r}")
        if self.budget_per_round < 1:
            raise ValueError("budget_per_round must be >= 1")


# ---------------------------------------------------------- extreme points

def _extremal_index(rows, cols, primary, tie):
    # lexsort orders by the last key first; [0] is the minimum under both
    return int(np.lexsort((tie, primary))[0])


def _boundary_mask(mask):
    # mask pixels with a 4-neighbor outside the mask (image border counts)
    padded = np.pad(mask, 1, constant_values=False)
    outside = ~padded
    touches = (outside[:-2, 1:-1] | outside[2:, 1:-1]
               | outside[1:-1, :-2] | outside[1:-1, 2:])
    return mask & touches


def _walk_boundary(boundary, start, steps, rng):
    """Uniform pick from boundary pixels within `steps` 8-connected hops."""
    reached = {start}
    frontier = [start]
    h, w = boundary.shape
    for _ in range(steps):
        grown = []
        for r, c in frontier:
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    nr, nc = r + dr, c + dc
                    if (0 <= nr < h and 0 <= nc < w and boundary[nr, nc]
                            and (nr, nc) not in reached):
                        reached.add((nr, nc))
                        grown.append((nr, nc))
        if not grown:
            break
        frontier = grown
    choices = sorted(reached)
    return choices[int(rng.integers(len(choices)))]


def simulate_extreme_points(gt_mask, jitter=0, rng=None):
    """Extremal pixels of a binary mask; ties go to the smaller other axis.

    With jitter > 0 each click drifts up to that many steps along the mask
    boundary, modeling imprecise humans; the four points stay on the mask.
    """
    mask = np.asarray(gt_mask).astype(bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("cannot click extreme points on an empty mask")
    picks = {
        "left": _extremal_index(rows, cols, cols, rows),
        "right": _extremal_index(rows, cols, -cols, rows),
        "top": _extremal_index(rows, cols, rows, cols),
        "bottom": _extremal_index(rows, cols, -rows, cols),
    }
    points = {name: (int(rows[i]), int(cols[i])) for name, i in picks.items()}

    if jitter > 0:
        if rng is None:
            raise ValueError("jitter requires an rng")
        boundary = _boundary_mask(mask)
        points = {name: _walk_boundary(boundary, rc, jitter, rng)
                  for name, rc in points.items()}
        # drift can cross the opposing click; restore the axis ordering
        if points["left"][1] > points["right"][1]:
            points["left"], points["right"] = points["right"], points["left"]
        if points["top"][0] > points["bottom"][0]:
            points["top"], points["bottom"] = points["bottom"], points["top"]

    def as_point(rc):
        return Point(rc[1], rc[0])

    return ExtremePoints(as_point(points["left"]), as_point(points["right"]),
                         as_point(points["top"]), as_point(points["bottom"]))


# ----------------------------------------------------------- error mining

def _adjacent_to(base, target):
    # base pixels with a 4-neighbor inside target
    near = np.zeros_like(target)
    near[1:, :] |= target[:-1, :]
    near[:-1, :] |= target[1:, :]
    near[:, 1:] |= target[:, :-1]
    near[:, :-1] |= target[:, 1:]
    return base & near


def _iou_gain(pixels, gt_region_id, pred, label_map, mean_before=None):
    if pixels.shape[0] == 0:
        return 0.0
    if mean_before is None:
        mean_before, _ = mean_region_iou(pred, label_map)
    corrected = pred.labels.copy()
    corrected[pixels[:, 0], pixels[:, 1]] = gt_region_id
    mean_after, _ = mean_region_iou(Segmentation(corrected), label_map)
    return mean_after - mean_before


def error_importance(err, pred, label_map):
    """Exact mean-IoU gain from fully correcting one error region."""
    return _iou_gain(err.pixels, err.gt_region_id, pred, label_map)


def extract_error_regions(pred, label_map):
    """All wrongly-assigned 4-connected groups, most important first."""
    if pred.labels.shape != label_map.labels.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    wrong = pred.labels != label_map.labels
    mean_before, _ = mean_region_iou(pred, label_map)
    regions = []
    for gt_id in range(1, label_map.n_regions + 1):
        err_mask = wrong & (label_map.labels == gt_id)
        if not err_mask.any():
            continue
        components, count = ndimage.label(err_mask)  # 4-connectivity default
        for comp in range(1, count + 1):
            rr, cc = np.nonzero(components == comp)
            pixels = np.column_stack([rr, cc])
            gain = _iou_gain(pixels, gt_id, pred, label_map, mean_before)
            regions.append(ErrorRegion(gt_id, pixels, gain))
    regions.sort(key=lambda r: -r.importance)  # stable: ties keep scan order
    return regions


# -------------------------------------------------------------- scribbles

def _first_point_candidates(err_mask, same_region, correct_same_region):
    """Starting-pixel pool: the stroke must set off from friendly territory.

    Preference order: border pixels touching a correctly-predicted pixel of
    the same region, then any same-region pixel outside this group, then the
    group's own boundary (covers fully-mispredicted regions).
    """
    tier = _adjacent_to(err_mask, correct_same_region)
    if tier.any():
        return tier
    tier = _adjacent_to(err_mask, same_region & ~err_mask)
    if tier.any():
        return tier
    return _boundary_mask(err_mask)


def simulate_scribble(err, label_map, rng, pred=None):
    """Longest of 10 random three-point strokes fully inside the true region.

    Each attempt starts on the error border, bends through two pixels drawn
    uniformly from the error region, and is kept only when every rasterized
    pixel still belongs to the target region. Returns None when all ten
    attempts leak outside (possible for slivers near region boundaries).
    """
    if err.pixels.shape[0] == 0:
        raise ValueError("cannot scribble on an empty error region")
    labels = label_map.labels
    height, width = labels.shape
    same_region = labels == err.gt_region_id
    err_mask = np.zeros_like(same_region)
    err_mask[err.pixels[:, 0], err.pixels[:, 1]] = True
    if pred is not None:
        correct = same_region & (pred.labels == err.gt_region_id)
    else:
        correct = same_region & ~err_mask
    start_rows, start_cols = np.nonzero(
        _first_point_candidates(err_mask, same_region, correct))

    best = None
    best_length = 0
    for _ in range(SCRIBBLE_ATTEMPTS):
        i = int(rng.integers(start_rows.size))
        j, k = (int(rng.integers(err.pixels.shape[0])) for _ in range(2))
        first = (float(start_cols[i]), float(start_rows[i]))
        mid = (float(err.pixels[j, 1]), float(err.pixels[j, 0]))
        last = (float(err.pixels[k, 1]), float(err.pixels[k, 0]))
        candidate = Scribble((first, mid, last), err.gt_region_id)
        raster = rasterize_scribble(candidate, width, height)
        if np.any(raster.mask.astype(bool) & ~same_region):
            continue
        length = int(raster.mask.sum())
        if length > best_length:
            best, best_length = candidate, length
    return best


def allocate_scribbles(pred, label_map, strategy, rng):
    """Spend one correction round's scribbles on the worst errors.

    Fixed mode gives every erroneous region one scribble on its most
    important group. Free mode walks the global importance ranking and
    stops after budget_per_round strokes, so one bad region may soak up
    the whole budget.
    """
    regions = extract_error_regions(pred, label_map)
    scribbles = []
    if strategy.mode == FIXED_ONE_PER_REGION:
        for gt_id in range(1, label_map.n_regions + 1):
            top = next((r for r in regions if r.gt_region_id == gt_id), None)
            if top is None:
                continue
            s = simulate_scribble(top, label_map, rng, pred=pred)
            if s is not None:
                scribbles.append(s)
    else:
        for err in regions:
            if len(scribbles) == strategy.budget_per_round:
                break
            s = simulate_scribble(err, label_map, rng, pred=pred)
            if s is not None:
                scribbles.append(s)
    return scribbles


def interactive_round(image, boxes, annotations, params, label_map, strategy,
                      rng, sharing="shared"):
    """One annotate-then-update cycle against the current prediction.

    annotations is the mutable list of per-region positive maps; new strokes
    are unioned in place. Returns the strokes, the refreshed segmentation,
    and its mean IoU.
    """
    width, height = label_map.width, label_map.height

    def predict():
        pairs = [build_region_annotation_pair(i, annotations)
                 for i in range(1, len(annotations) + 1)]
        seg, _probs = predict_segmentation(image, boxes, pairs, params, sharing)
        return seg

    current = predict()
    scribbles = allocate_scribbles(current, label_map, strategy, rng)
    for s in scribbles:
        raster = rasterize_scribble(s, width, height)
        annotations[s.region_id - 1] = annotations[s.region_id - 1].union(raster)
    updated = current if not scribbles else predict()
    iou, _per_region = mean_region_iou(updated, label_map)
    return scribbles, updated, iou

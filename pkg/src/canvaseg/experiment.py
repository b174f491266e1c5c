"""Experiment drivers: IoU-vs-scribbles curves and the loss/sharing grid.

Everything here is a pure function of the config: scenes are regenerated
from their seeds, annotation and correction streams are keyed per scene,
and CSV artifacts reproduce byte-for-byte on replay.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .data import generate_synthetic_dataset, prepare_image
from .geometry import build_region_annotation_pair
from .model import mean_region_iou, predict_segmentation
from .simulate import (
    FIXED_ONE_PER_REGION, FREE_BUDGET, AllocationStrategy, interactive_round,
)
from .training import (
    STREAM_CURVE, annotate_scene, evaluate_mean_iou, train_stage1,
)

log = logging.getLogger(__name__)

# grid order: baseline first, both improvements last
ABLATION_CELLS = (
    ("maskwise", "unshared"),
    ("maskwise", "shared"),
    ("pixelwise", "unshared"),
    ("pixelwise", "shared"),
)


@dataclass(frozen=True)
class CurvePoint:
    scribbles_per_region: float
    mean_iou: float
    round: int

    def __post_init__(self):
        if self.scribbles_per_region < 0:
            raise ValueError("scribbles_per_region must be >= 0")
        if not 0.0 <= self.mean_iou <= 1.0:
            raise ValueError("mean_iou must be in [0, 1]")
        if self.round < 0:
            raise ValueError("round must be >= 0")


def train_dataset(cfg):
    return generate_synthetic_dataset(
        cfg.dataset.train_scenes, cfg.dataset.size, cfg.dataset.seed)


def eval_dataset(cfg):
    # disjoint index range keeps eval scenes independent of training draws
    return generate_synthetic_dataset(
        cfg.dataset.eval_scenes, cfg.dataset.size, cfg.dataset.seed,
        first_index=cfg.dataset.train_scenes)


def _strategy_for(name, n_regions):
    if name == "fixed":
        return AllocationStrategy(FIXED_ONE_PER_REGION)
    return AllocationStrategy(FREE_BUDGET, budget_per_round=n_regions)


def _curve_for_scene(scene, params, cfg, strategy_name, rounds):
    """Per-round (cumulative scribbles, mean IoU) trajectory on one scene."""
    rng = np.random.default_rng([cfg.dataset.seed, STREAM_CURVE, scene.index])
    labels = scene.labels
    boxes, annotations = annotate_scene(scene, cfg.training.box_margin, 0, rng)
    image = prepare_image(scene.image)
    strategy = _strategy_for(strategy_name, labels.n_regions)

    pairs = [build_region_annotation_pair(i, annotations)
             for i in range(1, len(annotations) + 1)]
    pred, _ = predict_segmentation(image, boxes, pairs, params,
                                   cfg.training.sharing)
    iou, _ = mean_region_iou(pred, labels)
    ious, counts = [iou], [0]
    total = 0
    for _ in range(rounds):
        scribbles, pred, iou = interactive_round(
            image, boxes, annotations, params, labels, strategy, rng,
            cfg.training.sharing)
        total += len(scribbles)
        ious.append(iou)
        counts.append(total)
    per_region = [c / labels.n_regions for c in counts]
    return ious, per_region


def run_curve(scenes, params, cfg, strategy_name=None, rounds=None):
    """Mean IoU per interactive round, averaged across scenes.

    Returns rounds+1 CurvePoints; point 0 is the non-interactive
    prediction from extreme points alone.
    """
    if strategy_name is None:
        strategy_name = cfg.interaction.strategy
    if rounds is None:
        rounds = cfg.interaction.rounds
    all_ious, all_counts = [], []
    for scene in scenes:
        ious, per_region = _curve_for_scene(
            scene, params, cfg, strategy_name, rounds)
        all_ious.append(ious)
        all_counts.append(per_region)
        log.info("scene %d: IoU %.4f -> %.4f", scene.index, ious[0], ious[-1])
    points = []
    for r in range(rounds + 1):
        points.append(CurvePoint(
            scribbles_per_region=float(np.mean([c[r] for c in all_counts])),
            mean_iou=float(np.mean([i[r] for i in all_ious])),
            round=r))
    return points


def write_curve_csv(points, path):
    with open(path, "w", newline="") as f:
        f.write("round,scribbles_per_region,mean_iou\n")
        for p in points:
            f.write(f"{p.round:d},{p.scribbles_per_region:.6f},"
                    f"{p.mean_iou:.6f}\n")


def run_experiment(cfg, params, csv_path=None, scenes=None):
    """The configured interactive curve over the eval split."""
    if scenes is None:
        scenes = eval_dataset(cfg)
    points = run_curve(scenes, params, cfg)
    if csv_path:
        write_curve_csv(points, csv_path)
    return points


def run_ablation(cfg, csv_path=None):
    """Train the four loss/sharing cells and report extreme-points IoU.

    Each cell trains its own stage-1 model; sharing applies at both
    training and evaluation time.
    """
    train = train_dataset(cfg)
    evals = eval_dataset(cfg)
    rows = []
    for loss_mode, sharing in ABLATION_CELLS:
        cell = cfg.with_axes(loss_mode=loss_mode, sharing=sharing)
        log.info("ablation cell: loss=%s sharing=%s", loss_mode, sharing)
        params = train_stage1(train, cell)
        iou = evaluate_mean_iou(evals, params, cell)
        log.info("  mean IoU %.4f", iou)
        rows.append((loss_mode, sharing, iou))
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            f.write("loss_mode,sharing,mean_iou\n")
            for loss_mode, sharing, iou in rows:
                f.write(f"{loss_mode},{sharing},{iou:.6f}\n")
    return rows

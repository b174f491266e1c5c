"""Two-stage training over synthetic scenes.

Stage 1 learns to segment from extreme points alone. Stage 2 re-trains on
scenes augmented with corrective scribbles that a simulated annotator drew
against the stage-1 model's own mistakes, so the model learns to honor
corrections it will receive interactively.

Random streams are keyed as default_rng([seed, STREAM, scene_index]) so
every artifact replays exactly; the STREAM constants below keep the
stage-1, augmentation, and evaluation draws independent.
"""

import logging
from pathlib import Path

import numpy as np

from .checkpoint import save_params
from .data import prepare_image
from .geometry import (
    box_from_extreme_points, build_region_annotation_pair,
    rasterize_extreme_points, rasterize_scribble,
)
from .model import (
    AnnotatedImage, MomentumSGD, init_params, mean_region_iou,
    predict_segmentation, train_step,
)
from .simulate import (
    FIXED_ONE_PER_REGION, AllocationStrategy, allocate_scribbles,
    simulate_extreme_points,
)

log = logging.getLogger(__name__)

STREAM_ANNOTATE = 101
STREAM_BATCH = 102
STREAM_AUGMENT = 103
STREAM_EVAL = 104
STREAM_CURVE = 105


def annotate_scene(scene, box_margin, jitter=0, rng=None):
    """Initial annotation state: extreme points and their boxes per region."""
    labels = scene.labels
    width, height = labels.width, labels.height
    boxes, annotations = [], []
    for i in range(1, labels.n_regions + 1):
        ep = simulate_extreme_points(labels.labels == i, jitter, rng)
        boxes.append(box_from_extreme_points(ep, box_margin, width, height))
        annotations.append(rasterize_extreme_points(ep, width, height))
    return boxes, annotations


def example_from_scene(scene, boxes, annotations):
    pairs = [build_region_annotation_pair(i, annotations)
             for i in range(1, len(annotations) + 1)]
    return AnnotatedImage(prepare_image(scene.image), scene.labels, boxes, pairs)


def stage1_example(scene, cfg):
    rng = np.random.default_rng([cfg.dataset.seed, STREAM_ANNOTATE, scene.index])
    boxes, annotations = annotate_scene(
        scene, cfg.training.box_margin, cfg.training.ep_jitter, rng)
    return example_from_scene(scene, boxes, annotations)


def train_model(examples, cfg, seed, steps, start_params=None,
                checkpoint_path=None):
    """The shared trainer: momentum SGD over randomly drawn mini-batches."""
    if not examples:
        raise ValueError("cannot train on an empty dataset")
    tr = cfg.training
    params = start_params.copy() if start_params is not None else init_params(
        cfg.model, seed=seed)
    optimizer = MomentumSGD(params.all_tensors(), tr.learning_rate)
    batch_rng = np.random.default_rng([seed, STREAM_BATCH])
    for step in range(steps):
        picks = batch_rng.integers(len(examples), size=tr.batch_size)
        batch = [examples[int(i)] for i in picks]
        try:
            loss = train_step(batch, params, optimizer, tr.loss_mode, tr.sharing)
        except FloatingPointError as exc:
            raise FloatingPointError(f"{exc} at step {step}") from exc
        if tr.log_every and step % tr.log_every == 0:
            log.info("step %d/%d loss %.6f", step, steps, loss)
        if (checkpoint_path and tr.checkpoint_every
                and (step + 1) % tr.checkpoint_every == 0):
            save_params(params, checkpoint_path)
    if checkpoint_path:
        save_params(params, checkpoint_path)
    return params


def stage1_scenes(dataset, cfg):
    split = int(round(len(dataset) * cfg.dataset.stage1_fraction))
    return dataset[:max(split, 1)]


def heldout_scenes(dataset, cfg):
    split = int(round(len(dataset) * cfg.dataset.stage1_fraction))
    return dataset[max(split, 1):]


def train_stage1(dataset, cfg, checkpoint_path=None):
    """Extreme-points-only model over the first slice of the dataset."""
    examples = [stage1_example(scene, cfg) for scene in stage1_scenes(dataset, cfg)]
    return train_model(examples, cfg, seed=cfg.dataset.seed,
                       steps=cfg.training.steps_stage1,
                       checkpoint_path=checkpoint_path)


def generate_interactive_training_set(dataset, params, cfg):
    """Stage-1 tuples plus held-out scenes corrected by the simulator.

    Held-out scenes get one simulated scribble per erroneous region against
    the stage-1 prediction; scenes the model already segments perfectly
    contribute plain extreme-point tuples, keeping the zero-scribble state
    represented in stage-2 training.
    """
    examples = [stage1_example(scene, cfg) for scene in stage1_scenes(dataset, cfg)]
    strategy = AllocationStrategy(FIXED_ONE_PER_REGION)
    for scene in heldout_scenes(dataset, cfg):
        ann_rng = np.random.default_rng(
            [cfg.dataset.seed, STREAM_ANNOTATE, scene.index])
        boxes, annotations = annotate_scene(
            scene, cfg.training.box_margin, cfg.training.ep_jitter, ann_rng)
        pairs = [build_region_annotation_pair(i, annotations)
                 for i in range(1, len(annotations) + 1)]
        pred, _ = predict_segmentation(
            prepare_image(scene.image), boxes, pairs, params,
            cfg.training.sharing)
        sim_rng = np.random.default_rng(
            [cfg.dataset.seed, STREAM_AUGMENT, scene.index])
        scribbles = allocate_scribbles(pred, scene.labels, strategy, sim_rng)
        for s in scribbles:
            raster = rasterize_scribble(s, scene.labels.width, scene.labels.height)
            annotations[s.region_id - 1] = annotations[s.region_id - 1].union(raster)
        examples.append(example_from_scene(scene, boxes, annotations))
    return examples


def train_stage2(examples, cfg, start_params, checkpoint_path=None):
    """Fine-tune the stage-1 model on the scribble-augmented tuples."""
    return train_model(examples, cfg, seed=cfg.dataset.seed + 1,
                       steps=cfg.training.steps_stage2,
                       start_params=start_params, checkpoint_path=checkpoint_path)


def evaluate_mean_iou(scenes, params, cfg):
    """Extreme-points-only mean IoU over scenes (the non-interactive score)."""
    scores = []
    for scene in scenes:
        rng = np.random.default_rng([cfg.dataset.seed, STREAM_EVAL, scene.index])
        boxes, annotations = annotate_scene(
            scene, cfg.training.box_margin, 0, rng)
        pairs = [build_region_annotation_pair(i, annotations)
                 for i in range(1, len(annotations) + 1)]
        pred, _ = predict_segmentation(
            prepare_image(scene.image), boxes, pairs, params,
            cfg.training.sharing)
        iou, _ = mean_region_iou(pred, scene.labels)
        scores.append(iou)
    return float(np.mean(scores))

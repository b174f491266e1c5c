"""End-to-end acceptance checks for the package.

The trend checks at the bottom run the full reference experiment twice
(once to measure, once to pin byte-level determinism), so this file takes
several minutes; everything else in tests/ stays fast.
"""
import time
from pathlib import Path

import numpy as np
import pytest

import canvaseg.autodiff as ad
from canvaseg.config import load_config
from canvaseg.data import voronoi_partition
from canvaseg.experiment import (
    eval_dataset, run_ablation, run_curve, train_dataset, write_curve_csv,
)
from canvaseg.geometry import (
    Box, Scribble, box_from_extreme_points, build_region_annotation_pair,
    rasterize_extreme_points, rasterize_scribble,
)
from canvaseg.model import (
    GRADCHECK_CONFIG, AnnotatedImage, ModelConfig, ProbCanvas, RegionLabelMap,
    Segmentation, WeightMap, bce_target_patch, example_loss, init_params,
    maskwise_bce_loss, pixel_weights, pixelwise_loss, predict_segmentation,
)
from canvaseg.simulate import (
    extract_error_regions, simulate_extreme_points, simulate_scribble,
)
from canvaseg.training import (
    generate_interactive_training_set, train_stage1, train_stage2,
)

from oracles import (
    bce_oracle, components_oracle, min_area_weights_oracle,
    pixelwise_loss_oracle,
)

REFERENCE_CONFIG = (
    Path(__file__).resolve().parent.parent / "configs" / "experiment.yaml")

FAST_CONFIG = ModelConfig(
    channels=4, reduction=2, roi_size=9, logit_size=17,
    backbone_strides=(2,), head_convs=3, head_convs_before_resize=2)


def random_regions(rng, w, h, n):
    """Random full partition: nearest-site labels, resampled until all n
    regions are non-empty."""
    while True:
        cells = rng.choice(w * h, size=n, replace=False)
        sites = [(float(c % w), float(c // w)) for c in cells]
        labels = voronoi_partition(w, h, sites)
        if len(np.unique(labels)) == n:
            return RegionLabelMap(labels)


def random_case(rng, w, h, n):
    """Annotated example over a random partition, via the same extreme-point
    pipeline the trainer uses."""
    label_map = random_regions(rng, w, h, n)
    image = rng.uniform(-0.5, 0.5, (h, w, 3)).astype(np.float32)
    boxes, maps = [], []
    for i in range(1, n + 1):
        ep = simulate_extreme_points(label_map.labels == i)
        boxes.append(box_from_extreme_points(ep, 0.1, w, h))
        maps.append(rasterize_extreme_points(ep, w, h))
    pairs = [build_region_annotation_pair(i, maps) for i in range(1, n + 1)]
    return AnnotatedImage(image, label_map, boxes, pairs)


def random_boxes(rng, w, h, k):
    boxes = []
    for _ in range(k):
        x0, x1 = np.sort(rng.uniform(0.0, w - 1.0, 2))
        y0, y1 = np.sort(rng.uniform(0.0, h - 1.0, 2))
        boxes.append(Box(float(x0), float(y0),
                         float(max(x1, x0 + 1.0)), float(max(y1, y0 + 1.0))))
    return boxes


# ------------------------------------------------- gradient correctness

def test_loss_gradients_match_central_differences_on_the_toy_model():
    rng = np.random.default_rng(101)
    example = random_case(rng, 16, 16, 3)
    params = init_params(GRADCHECK_CONFIG, seed=102, dtype=np.float64)
    assert sum(t.data.size for t in params.all_tensors()) <= 5000

    start = time.monotonic()
    # probe step: large enough that float64 cancellation on near-zero
    # gradient components stays under tolerance, small enough to stay
    # inside one linear cell of the relu stack
    worst = max(
        ad.gradient_check(
            lambda _ps, mode=mode: example_loss(example, params, mode, "shared"),
            params.all_tensors(), epsilon=3e-5)
        for mode in ("pixelwise", "maskwise"))
    elapsed = time.monotonic() - start
    assert worst < 1e-5
    assert elapsed < 60.0


# --------------------------------------- normalization + label partition

def test_probabilities_normalize_and_labels_partition_on_random_canvases():
    rng = np.random.default_rng(7)
    params = init_params(FAST_CONFIG, seed=8)
    violations = 0
    for _ in range(100):
        # even sizes: the backbone needs dims divisible by its reduction
        w = 2 * int(rng.integers(8, 33))
        h = 2 * int(rng.integers(8, 33))
        n = int(rng.integers(1, 9))
        example = random_case(rng, w, h, n)
        seg, probs = predict_segmentation(
            example.image, example.boxes, example.pairs, params)
        sums = probs.tensor.data.sum(axis=2)
        violations += int(np.count_nonzero(np.abs(sums - 1.0) > 1e-5))
        labels = seg.labels
        if (labels.shape != (h, w)
                or not np.issubdtype(labels.dtype, np.integer)
                or labels.min() < 1 or labels.max() > n):
            violations += 1
        # exactly one region claims each pixel, and it is the argmax one
        claimed = np.argmax(probs.tensor.data, axis=2) + 1
        violations += int(np.count_nonzero(claimed != labels))
    assert violations == 0


# ------------------------------------------------------ sharing semantics

@pytest.mark.parametrize("n", [2, 5, 8])
def test_positive_scribble_lands_exactly_in_every_other_negative(n):
    rng = np.random.default_rng(300 + n)
    label_map = random_regions(rng, 32, 32, n)
    maps = [rasterize_extreme_points(
        simulate_extreme_points(label_map.labels == i), 32, 32)
        for i in range(1, n + 1)]
    before = [build_region_annotation_pair(i, maps) for i in range(1, n + 1)]

    j = int(rng.integers(1, n + 1))
    pts = tuple((float(x), float(y)) for x, y in rng.uniform(2, 29, (3, 2)))
    raster = rasterize_scribble(Scribble(pts, j), 32, 32)
    maps[j - 1] = maps[j - 1].union(raster)
    after = [build_region_annotation_pair(i, maps) for i in range(1, n + 1)]

    stroke = raster.mask.astype(bool)
    assert stroke.any()
    for i, (was, now) in enumerate(zip(before, after), start=1):
        if i == j:
            np.testing.assert_array_equal(
                now.positive.mask, np.maximum(was.positive.mask, raster.mask))
            np.testing.assert_array_equal(now.negative.mask, was.negative.mask)
        else:
            np.testing.assert_array_equal(now.positive.mask, was.positive.mask)
            np.testing.assert_array_equal(
                now.negative.mask, np.maximum(was.negative.mask, raster.mask))


# ----------------------------------------------------------- loss oracles

def test_pixelwise_loss_matches_direct_summation():
    rng = np.random.default_rng(41)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        logits = rng.standard_normal((8, 8, n)) * 3.0
        probs = np.exp(logits) / np.exp(logits).sum(axis=2, keepdims=True)
        label_map = random_regions(rng, 8, 8, n)
        weights = rng.uniform(0.1, 2.0, (8, 8))
        loss = pixelwise_loss(ProbCanvas(ad.Tensor(probs)), label_map,
                              WeightMap(weights))
        want = pixelwise_loss_oracle(probs, label_map.labels, weights)
        assert loss.item() == pytest.approx(want, rel=1e-6)


def test_maskwise_loss_matches_direct_summation():
    rng = np.random.default_rng(43)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        label_map = random_regions(rng, 8, 8, n)
        boxes = random_boxes(rng, 8, 8, n)
        patches = [ad.Tensor(rng.standard_normal((7, 7)) * 3.0)
                   for _ in range(n)]
        loss = maskwise_bce_loss(patches, boxes, label_map)
        want = sum(
            bce_oracle(p.data, bce_target_patch(label_map, i, b, 7,
                                                dtype=np.float64))
            for i, (p, b) in enumerate(zip(patches, boxes), start=1))
        assert loss.item() == pytest.approx(want, rel=1e-6)


def test_pixel_weights_match_the_brute_force_min_area_scan():
    rng = np.random.default_rng(47)
    for _ in range(20):
        k = int(rng.integers(1, 7))
        boxes = random_boxes(rng, 32, 32, k)
        got = pixel_weights(boxes, 32, 32)
        np.testing.assert_array_equal(
            got.values, min_area_weights_oracle(boxes, 32, 32))


# ------------------------------------------------------ simulator validity

def test_a_thousand_simulated_scribbles_stay_inside_their_region():
    rng = np.random.default_rng(53)
    drawn = 0
    attempts = 0
    while drawn < 1000:
        attempts += 1
        assert attempts <= 400, f"only {drawn} scribbles after {attempts} cases"
        n = int(rng.integers(3, 8))
        gt = random_regions(rng, 32, 32, n)
        pred = Segmentation(random_regions(rng, 32, 32, n).labels)
        for err in extract_error_regions(pred, gt):
            s = simulate_scribble(err, gt, rng, pred=pred)
            if s is None:
                continue
            raster = rasterize_scribble(s, 32, 32).mask.astype(bool)
            inside = gt.labels == err.gt_region_id
            assert not (raster & ~inside).any()
            drawn += 1
    assert drawn >= 1000


def test_error_extraction_matches_the_breadth_first_oracle():
    rng = np.random.default_rng(59)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        gt = random_regions(rng, 24, 24, n)
        pred = Segmentation(random_regions(rng, 24, 24, n).labels)
        regions = extract_error_regions(pred, gt)
        got = sorted(sorted(map(tuple, r.pixels)) for r in regions)
        wrong = pred.labels != gt.labels
        want = []
        for gt_id in range(1, n + 1):
            want += components_oracle(wrong & (gt.labels == gt_id))
        assert got == sorted(want)


# ------------------------------------------------- reference experiments

def table_pipeline(out_dir, tag):
    cfg = load_config(REFERENCE_CONFIG)
    csv = out_dir / f"table_{tag}.csv"
    start = time.monotonic()
    rows = run_ablation(cfg, csv_path=csv)
    elapsed = time.monotonic() - start
    return {"rows": rows, "bytes": csv.read_bytes(), "elapsed": elapsed}


def curve_pipeline(out_dir, tag):
    cfg = load_config(REFERENCE_CONFIG)
    start = time.monotonic()
    train = train_dataset(cfg)
    evals = eval_dataset(cfg)
    stage1 = train_stage1(train, cfg)
    augmented = generate_interactive_training_set(train, stage1, cfg)
    stage2 = train_stage2(augmented, cfg, stage1)
    out = {}
    for strategy in ("fixed", "free"):
        csv = out_dir / f"curve_{strategy}_{tag}.csv"
        points = run_curve(evals, stage2, cfg, strategy_name=strategy)
        write_curve_csv(points, csv)
        out[strategy] = {"points": points, "bytes": csv.read_bytes()}
    out["elapsed"] = time.monotonic() - start
    return out


@pytest.fixture(scope="module")
def table_run(tmp_path_factory):
    return table_pipeline(tmp_path_factory.mktemp("table_run"), "first")


@pytest.fixture(scope="module")
def table_rerun(tmp_path_factory):
    return table_pipeline(tmp_path_factory.mktemp("table_rerun"), "second")


@pytest.fixture(scope="module")
def curve_run(tmp_path_factory):
    return curve_pipeline(tmp_path_factory.mktemp("curve_run"), "first")


@pytest.fixture(scope="module")
def curve_rerun(tmp_path_factory):
    return curve_pipeline(tmp_path_factory.mktemp("curve_rerun"), "second")


class TestLossAndSharingGrid:
    def test_mean_iou_ordering_holds_with_margin(self, table_run):
        by_cell = {(m, s): iou for m, s, iou in table_run["rows"]}
        pw_shared = by_cell[("pixelwise", "shared")]
        pw_unshared = by_cell[("pixelwise", "unshared")]
        mw_unshared = by_cell[("maskwise", "unshared")]
        assert pw_shared > pw_unshared > mw_unshared
        assert pw_shared >= mw_unshared + 0.02

    def test_grid_finishes_inside_its_budget(self, table_run):
        assert table_run["elapsed"] < 30 * 60


class TestInteractiveCurves:
    def test_four_rounds_of_corrections_gain_at_least_five_points(
            self, curve_run):
        for strategy in ("fixed", "free"):
            ious = [p.mean_iou for p in curve_run[strategy]["points"]]
            assert ious[4] >= ious[0] + 0.05, (strategy, ious)

    def test_free_allocation_never_trails_fixed(self, curve_run):
        fixed = [p.mean_iou for p in curve_run["fixed"]["points"]]
        free = [p.mean_iou for p in curve_run["free"]["points"]]
        for k, (a, b) in enumerate(zip(fixed, free)):
            assert b >= a, (k, fixed, free)

    def test_mean_iou_is_monotone_within_the_noise_margin(self, curve_run):
        for strategy in ("fixed", "free"):
            ious = [p.mean_iou for p in curve_run[strategy]["points"]]
            for a, b in zip(ious, ious[1:]):
                assert b >= a - 0.005, (strategy, ious)

    def test_pipeline_finishes_inside_its_budget(self, curve_run):
        assert curve_run["elapsed"] < 10 * 60


class TestExperimentDeterminism:
    def test_grid_csv_reproduces_byte_identically(
            self, table_run, table_rerun):
        assert table_run["bytes"] == table_rerun["bytes"]

    def test_curve_csvs_reproduce_byte_identically(
            self, curve_run, curve_rerun):
        for strategy in ("fixed", "free"):
            assert (curve_run[strategy]["bytes"]
                    == curve_rerun[strategy]["bytes"])

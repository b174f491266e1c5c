"""Synthetic Voronoi scenes: deterministic, partitioned, desk-scale.

Each scene partitions the image into 2 to 8 regions by nearest-site
assignment at smoothly distorted sample positions, then fills regions with
distinct base colors plus a low-amplitude brightness field. Scenes are a
pure function of (seed, index) and survive the 8-bit PNG round trip
bitwise, because generation already quantizes to 255 levels.
"""

import json
from dataclasses import dataclass
from itertools import count
from pathlib import Path

import numpy as np
from PIL import Image

from .model import RegionLabelMap

SCENE_SIZES = (32, 64, 128)
MIN_REGION_PIXELS = 25
MIN_COLOR_DISTANCE = 0.25
DISTORTION_CELLS = 4
DISTORTION_AMPLITUDE = 0.06   # fraction of the scene side
SHADING_CELLS = 8
SHADING_AMPLITUDE = 0.05


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: np.ndarray           # float32 [H,W,3] in [0,1], 255-level quantized
    labels: RegionLabelMap
    seed: int
    index: int

    @property
    def size(self):
        return self.labels.labels.shape[0]


def prepare_image(image):
    """Model-side input scaling: center [0,1] pixels around zero.

    Uncentered inputs leave half the first convolution's units inactive at
    initialization, which slows or stalls small models.
    """
    return np.asarray(image, dtype=np.float32) - np.float32(0.5)


def voronoi_partition(width, height, sites, displacement=None):
    """Nearest-site label per pixel center; ties go to the lower site index.

    sites is [N,2] in (x, y). displacement, when given, is a pair of [H,W]
    fields added to the sample positions, which bends the cell boundaries.
    """
    sites = np.asarray(sites, dtype=np.float64)
    cc, rr = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    if displacement is not None:
        dx, dy = displacement
        cc = cc + dx
        rr = rr + dy
    d2 = ((cc[None] - sites[:, 0, None, None]) ** 2
          + (rr[None] - sites[:, 1, None, None]) ** 2)
    return np.argmin(d2, axis=0).astype(np.int32) + 1


def _value_noise(rng, height, width, cells, amplitude):
    """Bilinear interpolation of a coarse random lattice, in [-amp, amp]."""
    lattice = rng.uniform(-1.0, 1.0, (cells + 1, cells + 1))
    ys = np.linspace(0.0, cells, height)
    xs = np.linspace(0.0, cells, width)
    r0 = np.minimum(ys.astype(int), cells - 1)
    c0 = np.minimum(xs.astype(int), cells - 1)
    fr = (ys - r0)[:, None]
    fc = (xs - c0)[None, :]
    a = lattice[np.ix_(r0, c0)]
    b = lattice[np.ix_(r0, c0 + 1)]
    c = lattice[np.ix_(r0 + 1, c0)]
    d = lattice[np.ix_(r0 + 1, c0 + 1)]
    top = a * (1 - fc) + b * fc
    bottom = c * (1 - fc) + d * fc
    return amplitude * (top * (1 - fr) + bottom * fr)


def _distinct_colors(rng, n):
    colors = []
    attempts = 0
    while len(colors) < n:
        candidate = rng.uniform(0.05, 0.95, 3)
        attempts += 1
        if attempts > 1000 or all(
                np.linalg.norm(candidate - c) >= MIN_COLOR_DISTANCE
                for c in colors):
            colors.append(candidate)
    return np.asarray(colors)


def generate_scene(size, seed, index):
    """One scene, deterministic in (seed, index); resamples degenerate draws."""
    if size not in SCENE_SIZES:
        raise ValueError(f"size must be one of {SCENE_SIZES}")
    for attempt in count():
        rng = np.random.default_rng([seed, index, attempt])
        n = int(rng.integers(2, 9))
        sites = rng.uniform(0.0, size, (n, 2))
        amp = DISTORTION_AMPLITUDE * size
        dx = _value_noise(rng, size, size, DISTORTION_CELLS, amp)
        dy = _value_noise(rng, size, size, DISTORTION_CELLS, amp)
        labels = voronoi_partition(size, size, sites, (dx, dy))
        sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
        if len(sizes) == n and (sizes >= MIN_REGION_PIXELS).all():
            break
    colors = _distinct_colors(rng, n)
    image = colors[labels - 1]
    image += _value_noise(rng, size, size, SHADING_CELLS, SHADING_AMPLITUDE)[..., None]
    image = np.clip(image, 0.0, 1.0)
    image = (np.round(image * 255.0) / 255.0).astype(np.float32)
    return SyntheticScene(image, RegionLabelMap(labels), seed, index)


def generate_synthetic_dataset(count_, size, seed, first_index=0):
    """Scenes first_index .. first_index+count-1 under one master seed."""
    if count_ < 1:
        raise ValueError("count must be >= 1")
    return [generate_scene(size, seed, first_index + i) for i in range(count_)]


# ------------------------------------------------------------- persistence

def save_scene(scene, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rgb = np.round(scene.image * 255.0).astype(np.uint8)
    Image.fromarray(rgb).save(directory / "image.png")
    Image.fromarray(scene.labels.labels.astype(np.uint16)).save(
        directory / "labels.png")
    meta = {"seed": scene.seed, "index": scene.index,
            "regions": scene.labels.n_regions}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_scene(directory):
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    rgb = np.asarray(Image.open(directory / "image.png")).astype(np.float32)
    labels = np.asarray(Image.open(directory / "labels.png")).astype(np.int32)
    return SyntheticScene(rgb / np.float32(255.0), RegionLabelMap(labels),
                          int(meta["seed"]), int(meta["index"]))


def scene_dir_name(index):
    return f"scene_{index:05d}"


def save_dataset(scenes, directory):
    directory = Path(directory)
    for scene in scenes:
        save_scene(scene, directory / scene_dir_name(scene.index))


def load_dataset(directory):
    directory = Path(directory)
    dirs = sorted(p for p in directory.iterdir() if p.is_dir())
    if not dirs:
        raise ValueError(f"no scenes under {directory}")
    return [load_scene(p) for p in dirs]

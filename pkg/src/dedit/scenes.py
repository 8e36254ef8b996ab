"""Synthetic shape scenes: generation, corpus files, region metrics, pretraining.

Scenes are flat-colored shapes over a flat background, rendered without
anti-aliasing so every pixel belongs to exactly one item. The palette is
the eight corners of the RGB cube in [-1,1] space, which makes per-pixel
color classification a sign test and keeps captions to two words per item.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tc
from .attention import Assignment, assignment_from_mask
from .errors import (ConfigError, DimensionError, DivergenceError, GenerationError,
                     MetricError)
from .imagefiles import image_to_ppm, load_image, load_mask, mask_to_pgm
from .masks import SegmentationMap, validate_partition
from .model import Checkpoint, select_params, training_loss
from .schedule import make_schedule, noise_rng
from .text import ItemPrompt, encode_prompt

PALETTE: Dict[str, Tuple[float, float, float]] = {
    "black": (-1.0, -1.0, -1.0),
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
    "magenta": (1.0, -1.0, 1.0),
    "cyan": (-1.0, 1.0, 1.0),
    "white": (1.0, 1.0, 1.0),
}
COLOR_NAMES = tuple(PALETTE)
PALETTE_ARRAY = np.array([PALETTE[c] for c in COLOR_NAMES], dtype=np.float32)
SHAPES = ("circle", "square", "triangle", "star")
BASE_WORDS = COLOR_NAMES + SHAPES + ("background",)

SCENE_STREAM = 0x53434E  # scene-spec draws
PRETRAIN_STREAM = 0x505254  # pretraining batch draws
MIN_ITEM_PIXELS = 4
MAX_SPEC_ATTEMPTS = 20
FOREGROUND_THRESHOLD = 1.0  # half the minimum palette pair distance


# ---------------------------------------------------------------- scene specs

@dataclass
class ShapeSpec:
    shape: str
    color: str
    center: Tuple[float, float]  # (row, col)
    scale: float

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.color not in PALETTE:
            raise ConfigError(f"unknown color {self.color!r}")
        if self.scale <= 0:
            raise ConfigError(f"shape scale must be positive, got {self.scale}")


@dataclass
class SceneSpec:
    background: str
    items: List[ShapeSpec]
    size: int = 32

    def validate(self) -> None:
        if self.background not in PALETTE:
            raise ConfigError(f"unknown color {self.background!r}")
        n = len(self.items) + 1
        # random corpus scenes stay in 3..8; explicit fixtures may go down
        # to a single shape on a background
        if not 2 <= n <= 8:
            raise ConfigError(f"scene needs 2..8 items including background, got {n}")
        for s in self.items:
            s.validate()


def shape_mask(shape: str, center: Tuple[float, float], scale: float,
               size: int) -> np.ndarray:
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    dr, dc = rr - center[0], cc - center[1]
    if shape == "circle":
        return dr * dr + dc * dc <= scale * scale
    if shape == "square":
        return np.maximum(np.abs(dr), np.abs(dc)) <= scale
    if shape == "triangle":
        # upward point: apex one scale above center, base one scale below
        return (np.abs(dr) <= scale) & (np.abs(dc) <= (dr + scale) * 0.5)
    if shape == "star":
        # four points along the axes, concave between them
        s = 0.35 * scale
        return ((np.abs(dr) <= scale) & (np.abs(dc) <= scale)
                & (np.abs(dr) * np.abs(dc) <= s * s))
    raise ConfigError(f"unknown shape {shape!r}")


def render_scene(spec: SceneSpec):
    """Paint items back to front over the background; the label map records
    final ownership. Raises when any item keeps fewer than 4 visible pixels."""
    spec.validate()
    size = spec.size
    labels = np.zeros((size, size), dtype=np.int32)
    image = np.empty((size, size, 3), dtype=np.float32)
    image[:] = PALETTE[spec.background]
    for k, item in enumerate(spec.items, start=1):
        mask = shape_mask(item.shape, item.center, item.scale, size)
        labels[mask] = k
        image[mask] = PALETTE[item.color]

    n_items = len(spec.items) + 1
    counts = np.bincount(labels.ravel(), minlength=n_items)
    starved = [i for i in range(n_items) if counts[i] < MIN_ITEM_PIXELS]
    if starved:
        raise GenerationError(
            f"items {starved} keep fewer than {MIN_ITEM_PIXELS} visible pixels")

    captions = [["background", spec.background]]
    captions += [[item.color, item.shape] for item in spec.items]
    return image, SegmentationMap(labels, n_items), captions


def random_scene_spec(rng: np.random.Generator, size: int = 32) -> SceneSpec:
    n_shapes = int(rng.integers(2, 8))  # 3..8 items with background
    background = COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))]
    items = []
    for _ in range(n_shapes):
        items.append(ShapeSpec(
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            color=COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))],
            center=(float(rng.uniform(4.0, size - 5.0)),
                    float(rng.uniform(4.0, size - 5.0))),
            scale=float(rng.uniform(2.5, 6.0))))
    return SceneSpec(background=background, items=items, size=size)


def generate_scene(spec_or_seed, stream: int = SCENE_STREAM):
    """Render an explicit spec, or draw specs from a seed until one renders
    with every item visible (bounded retries)."""
    if isinstance(spec_or_seed, SceneSpec):
        return render_scene(spec_or_seed)
    rng = noise_rng(int(spec_or_seed), stream)
    last = None
    for _ in range(MAX_SPEC_ATTEMPTS):
        try:
            return render_scene(random_scene_spec(rng))
        except GenerationError as e:
            last = e
    raise GenerationError(
        f"no fully-visible scene in {MAX_SPEC_ATTEMPTS} attempts: {last}")


def scene_caption(captions: Sequence[Sequence[str]]) -> List[str]:
    """Whole-scene caption: per-item words concatenated in item order."""
    return [w for words in captions for w in words]


# ---------------------------------------------------------------- corpus files

class Corpus:
    """Directory of numbered scene triples with an index file."""

    def __init__(self, root: str, count: int, seed: int):
        self.root = root
        self.count = count
        self.seed = seed
        self._cache: Dict[int, tuple] = {}

    def paths(self, i: int) -> Tuple[str, str, str]:
        if not 0 <= i < self.count:
            raise ConfigError(f"scene index {i} outside [0, {self.count})")
        stem = os.path.join(self.root, f"{i:05d}")
        return stem + ".ppm", stem + ".pgm", stem + ".json"

    def load(self, i: int):
        if i not in self._cache:
            ppm, pgm, js = self.paths(i)
            with open(js, "r", encoding="utf-8") as f:
                meta = json.load(f)
            image = load_image(ppm)
            mask = load_mask(pgm, n_items=int(meta["n_items"]))
            self._cache[i] = (image, mask, meta["captions"])
        return self._cache[i]


def generate_corpus(n: int, seed: int, out_dir: str) -> Corpus:
    if n < 1:
        raise ConfigError(f"corpus size must be >= 1, got {n}")
    os.makedirs(out_dir, exist_ok=True)
    for i in range(n):
        image, mask, captions = generate_scene(seed, stream=SCENE_STREAM + i)
        stem = os.path.join(out_dir, f"{i:05d}")
        with open(stem + ".ppm", "wb") as f:
            f.write(image_to_ppm(image))
        with open(stem + ".pgm", "wb") as f:
            f.write(mask_to_pgm(mask))
        with open(stem + ".json", "w", encoding="utf-8") as f:
            json.dump({"captions": captions, "n_items": mask.n_items}, f,
                      sort_keys=True)
    index = {
        "count": n,
        "seed": seed,
        "palette": {c: list(PALETTE[c]) for c in COLOR_NAMES},
        "vocabulary": list(BASE_WORDS),
    }
    with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as f:
        json.dump(index, f, sort_keys=True, indent=1)
    return Corpus(out_dir, n, seed)


def load_corpus(root: str) -> Corpus:
    with open(os.path.join(root, "index.json"), "r", encoding="utf-8") as f:
        index = json.load(f)
    return Corpus(root, int(index["count"]), int(index["seed"]))


# ---------------------------------------------------------------- metrics

@dataclass
class RegionMetrics:
    mean_color_distance: float
    untouched_mse: float
    iou: float
    centroid: Tuple[float, float]
    area: int

    def to_dict(self) -> dict:
        return {"mean_color_distance": self.mean_color_distance,
                "untouched_mse": self.untouched_mse, "iou": self.iou,
                "centroid": list(self.centroid), "area": self.area}


def classify_pixels(image: np.ndarray) -> np.ndarray:
    """Index of the nearest palette color per pixel."""
    d = ((np.asarray(image, dtype=np.float32)[..., None, :] - PALETTE_ARRAY) ** 2
         ).sum(axis=-1)
    return np.argmin(d, axis=-1)


def dominant_color(image: np.ndarray, region: np.ndarray) -> str:
    if not np.any(region):
        raise MetricError("dominant color of an empty region is undefined")
    idx = classify_pixels(image)[region]
    return COLOR_NAMES[int(np.bincount(idx, minlength=len(COLOR_NAMES)).argmax())]


def color_region(image: np.ndarray, color: str) -> np.ndarray:
    """Pixels whose nearest palette color is `color`."""
    if color not in PALETTE:
        raise ConfigError(f"unknown color {color!r}")
    return classify_pixels(image) == COLOR_NAMES.index(color)


def region_centroid(region: np.ndarray) -> Tuple[float, float]:
    if not np.any(region):
        raise MetricError("centroid of an empty region is undefined")
    rows, cols = np.nonzero(region)
    return float(rows.mean()), float(cols.mean())


def region_metrics(image_a: np.ndarray, image_b: np.ndarray, m: SegmentationMap,
                   item: int) -> RegionMetrics:
    a = np.asarray(image_a, dtype=np.float32)
    b = np.asarray(image_b, dtype=np.float32)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes {a.shape} and {b.shape} differ")
    if a.shape[:2] != m.labels.shape:
        raise DimensionError(
            f"mask {m.labels.shape} does not cover image {a.shape[:2]}")
    region = m.labels == item
    if not np.any(region):
        raise MetricError(f"item {item} owns no pixels; metrics undefined")

    mean_a = a[region].mean(axis=0)
    mean_b = b[region].mean(axis=0)
    dist = float(np.linalg.norm(mean_a - mean_b))

    outside = ~region
    mse = float(((a[outside] - b[outside]) ** 2).mean()) if outside.any() else 0.0

    # foreground = pixels far from image_a's own surroundings of the item
    bg = a[outside].mean(axis=0) if outside.any() else mean_a
    fg_a = np.linalg.norm(a - bg, axis=-1) > FOREGROUND_THRESHOLD
    fg_b = np.linalg.norm(b - bg, axis=-1) > FOREGROUND_THRESHOLD
    union = int((fg_a | fg_b).sum())
    iou = float((fg_a & fg_b).sum() / union) if union else 1.0

    return RegionMetrics(mean_color_distance=dist, untouched_mse=mse, iou=iou,
                         centroid=region_centroid(region), area=int(region.sum()))


# ---------------------------------------------------------------- pretraining

def caption_prompt(ckpt: Checkpoint, item_id: int, words: Sequence[str]) -> ItemPrompt:
    return ItemPrompt(item_id=item_id,
                      token_ids=ckpt.vocab.ids_for_words(" ".join(words)),
                      kind="text")


def _dense_assignment(ckpt: Checkpoint) -> Assignment:
    return Assignment(np.zeros(ckpt.config.n_patches, dtype=np.int64), 1)


def _null_prompt(ckpt: Checkpoint, prompt: ItemPrompt) -> ItemPrompt:
    return ItemPrompt(item_id=prompt.item_id,
                      token_ids=[ckpt.vocab.null_id] * len(prompt.token_ids),
                      kind="text")


def pretrain(ckpt: Checkpoint, corpus: Corpus, steps: int, seed: int,
             lr: float = 3e-4, accumulation: int = 4, mix: str = "joint",
             cfg_dropout: float = 0.1,
             on_step: Optional[Callable[[int, float], None]] = None) -> Checkpoint:
    """Joint training of denoiser, text encoder, and base embeddings.

    Optimizer steps alternate between dense conditioning (every patch on
    the whole-scene caption) and grouped conditioning (patches on their
    own item captions); mix="dense" keeps every step dense instead.
    A `cfg_dropout` fraction of examples swap their captions for null
    tokens so the unconditional branch of guided sampling is trained
    rather than left at initialization. The learning rate follows a
    cosine decay from `lr` to zero over `steps`; constant-rate runs at
    this scale oscillate between nearby palette colors late in training
    instead of settling.
    """
    if mix not in ("joint", "dense"):
        raise ConfigError(f"mix must be joint or dense, got {mix!r}")
    if not 0.0 <= cfg_dropout < 1.0:
        raise ConfigError(f"cfg_dropout must be in [0, 1), got {cfg_dropout}")
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    if accumulation < 1:
        raise ConfigError(f"accumulation must be >= 1, got {accumulation}")
    if corpus.count < 1:
        raise ConfigError("corpus is empty")

    if steps > 0:
        sched = make_schedule(ckpt.schedule_T, ckpt.schedule_curve)
        # the injected-row table is empty before any project exists; train
        # everything that actually holds numbers
        params = [p for p in select_params(ckpt, "all") if p.size > 0]
        ckpt.set_requires_grad(params)
        adam = tc.AdamState(params)
        rng = noise_rng(seed, PRETRAIN_STREAM)
        patch = ckpt.config.patch
        for step in range(steps):
            grouped = mix == "joint" and step % 2 == 1
            try:
                with tc.tape_scope():
                    total = None
                    for _ in range(accumulation):
                        image, mask, captions = corpus.load(
                            int(rng.integers(corpus.count)))
                        if grouped:
                            assign = assignment_from_mask(mask, patch)
                            prompts = [caption_prompt(ckpt, i, w)
                                       for i, w in enumerate(captions)]
                        else:
                            assign = _dense_assignment(ckpt)
                            prompts = [caption_prompt(ckpt, 0,
                                                      scene_caption(captions))]
                        if rng.random() < cfg_dropout:
                            prompts = [_null_prompt(ckpt, p) for p in prompts]
                        embs = [encode_prompt(ckpt.vocab, ckpt.encoder, p)
                                for p in prompts]
                        loss = training_loss(ckpt, image, embs, assign, sched, rng)
                        total = loss if total is None else tc.add(total, loss)
                    total = tc.scale(total, 1.0 / accumulation)
                    tc.backprop(total)
            except DivergenceError as e:
                raise DivergenceError(f"pretraining step {step}: {e}") from None
            decayed = lr * 0.5 * (1.0 + math.cos(math.pi * step / steps))
            tc.adam_step(params, adam, decayed)
            for p in params:
                p.grad = None
            if on_step is not None:
                on_step(step, total.item())

    ckpt.tag = "pretrained"
    return ckpt

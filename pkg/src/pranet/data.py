"""Image/mask datasets: PNG loading, seeded splits, rescaling, synthetic blobs."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image
from scipy.ndimage import uniform_filter

from . import ops
from .autograd import Tensor
from .errors import DataIOError, InvalidArgument

SCALES = (0.75, 1.0, 1.25)
IMAGE_SUFFIXES = (".png",)


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # [1,3,h,w] float32 in [0,1]
    mask: np.ndarray  # [1,1,h,w] float32 in {0,1}

    def __post_init__(self):
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise InvalidArgument(f"{self.image_id}: image {self.image.shape} and mask "
                                  f"{self.mask.shape} differ in extent")


@dataclass
class Dataset:
    samples: List[Sample] = field(default_factory=list)
    split: str = "unsplit"

    def __post_init__(self):
        ids = [s.image_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("image ids must be unique within a dataset")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def ids(self) -> List[str]:
        return [s.image_id for s in self.samples]


def _read_png(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as exc:
        raise DataIOError(f"cannot decode {path}: {exc}") from exc


def load_pairs(image_dir, mask_dir) -> Dataset:
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    for d in (image_dir, mask_dir):
        if not d.is_dir():
            raise DataIOError(f"not a directory: {d}")
    names = sorted(p.name for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    missing = [n for n in names if not (mask_dir / n).is_file()]
    if missing:
        raise DataIOError("missing masks for: " + ", ".join(missing))
    samples = []
    for name in names:
        rgb = _read_png(image_dir / name, "RGB").astype(np.float32) / 255.0
        gray = _read_png(mask_dir / name, "L")
        if rgb.shape[:2] != gray.shape:
            raise DataIOError(f"{name}: image {rgb.shape[:2]} and mask {gray.shape} differ in size")
        samples.append(Sample(
            image_id=os.path.splitext(name)[0],
            image=rgb.transpose(2, 0, 1)[None].copy(),
            mask=(gray >= 128).astype(np.float32)[None, None],
        ))
    return Dataset(samples)


def save_pairs(dataset: Dataset, image_dir, mask_dir) -> None:
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for s in dataset:
        rgb = np.round(s.image[0].transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(rgb, "RGB").save(image_dir / f"{s.image_id}.png")
        Image.fromarray((s.mask[0, 0] * 255).astype(np.uint8), "L").save(mask_dir / f"{s.image_id}.png")


def split_80_10_10(dataset: Dataset, seed: int):
    n = len(dataset)
    if n < 10:
        raise InvalidArgument(f"need at least 10 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(
        Dataset([dataset[i] for i in idx], split=tag)
        for idx, tag in zip(parts, ("train", "val", "test"))
    )


def resize_sample(s: Sample, size: int) -> Sample:
    if s.image.shape[2:] == (size, size):
        return s
    image = ops.bilinear_resize(Tensor(s.image), size, size).data
    mask = ops.bilinear_resize(Tensor(s.mask), size, size).data
    return Sample(s.image_id, image.astype(np.float32), (mask >= 0.5).astype(np.float32))


def scaled_size(base: int, scale: float) -> int:
    size = int(round(round(base * scale) / 16.0)) * 16
    if size < 16:
        raise InvalidArgument(f"scale {scale} of base {base} gives size {size} < 16")
    return size


def multiscale_view(s: Sample, scale: float, base: int) -> Sample:
    return resize_sample(s, scaled_size(base, scale))


def _synth_one(rng: np.random.Generator, size: int):
    cy, cx = rng.uniform(0.2, 0.8, size=2) * size
    r0 = rng.uniform(0.12, 0.30) * size
    amps = rng.uniform(0.0, 0.18, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)

    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    theta = np.arctan2(yy - cy, xx - cx)
    radius = r0 * (1 + sum(a * np.sin((k + 1) * theta + ph)
                           for k, (a, ph) in enumerate(zip(amps, phases))))
    mask = (np.hypot(yy - cy, xx - cx) <= radius).astype(np.float32)

    bg = rng.uniform(0.0, 1.0, size=3)
    fg = np.empty(3)
    for c in range(3):
        # uniform over [0, bg-0.15] U [bg+0.15, 1]
        lo_len = max(bg[c] - 0.15, 0.0)
        hi_len = max(1.0 - (bg[c] + 0.15), 0.0)
        u = rng.uniform(0.0, lo_len + hi_len)
        fg[c] = u if u < lo_len else bg[c] + 0.15 + (u - lo_len)

    noise = rng.normal(0.0, 0.05, size=(3, size, size))
    base = np.where(mask[None] > 0, fg[:, None, None], bg[:, None, None])
    image = base + noise
    for _ in range(2):
        image = uniform_filter(image, size=(1, 3, 3), mode="nearest")
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image[None], mask[None, None]


def synth_generate(seed: int, n: int, size: int) -> Dataset:
    """Deterministic textured-blob images with soft boundaries and their masks."""
    if n < 0:
        raise InvalidArgument(f"n must be non-negative, got {n}")
    if size < 32 or size % 16:
        raise InvalidArgument(f"size must be >= 32 and divisible by 16, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        image, mask = _synth_one(rng, size)
        samples.append(Sample(f"synth_{i:05d}", image, mask))
    return Dataset(samples)

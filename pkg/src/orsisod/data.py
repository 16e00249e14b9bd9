"""Synthetic overhead-style scenes with binary saliency masks, plus I/O and augmentation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

CATEGORIES = ("big", "small", "narrow", "multiple", "mid")
INDEX_NAME = "index.csv"


@dataclass
class DatasetItem:
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8, 0 or 255
    proportion: float
    category: str


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled random grid, values in [0, 1]."""
    grid = rng.random((cells + 1, cells + 1))
    t = np.linspace(0, cells, size, endpoint=False)
    i = t.astype(int)
    f = t - i
    rows = grid[i] * (1 - f)[:, None] + grid[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = np.array([rng.uniform(0.2, 0.4), rng.uniform(0.25, 0.45), rng.uniform(0.15, 0.35)])
    texture = 0.6 * _smooth_noise(rng, size, 4) + 0.4 * _smooth_noise(rng, size, 16)
    img = base[None, None, :] * (0.7 + 0.6 * texture[:, :, None])
    return img + rng.normal(0.0, 0.02, (size, size, 3))


def _foreground_color(rng: np.random.Generator) -> np.ndarray:
    color = rng.uniform(0.55, 0.95, 3)
    color[rng.integers(3)] = rng.uniform(0.85, 1.0)
    return color


def _ellipse(yy, xx, cy, cx, ry, rx, angle):
    c, s = np.cos(angle), np.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _box(yy, xx, cy, cx, hy, hx, angle):
    c, s = np.cos(angle), np.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (np.abs(u) <= hx) & (np.abs(v) <= hy)


def _shape_with_area(rng, yy, xx, size, area):
    """One ellipse or rotated box of roughly ``area`` pixels."""
    aspect = rng.uniform(0.5, 2.0)
    angle = rng.uniform(0, np.pi)
    if rng.random() < 0.5:
        r = np.sqrt(area / np.pi)
        ry, rx = r * np.sqrt(aspect), r / np.sqrt(aspect)
        margin = max(ry, rx)
        cy, cx = rng.uniform(min(margin, size / 2), max(size - margin, size / 2), 2)
        return _ellipse(yy, xx, cy, cx, ry, rx, angle)
    half = np.sqrt(area) / 2
    hy, hx = half * np.sqrt(aspect), half / np.sqrt(aspect)
    margin = max(hy, hx)
    cy, cx = rng.uniform(min(margin, size / 2), max(size - margin, size / 2), 2)
    return _box(yy, xx, cy, cx, hy, hx, angle)


def _render_mask(rng: np.random.Generator, size: int, category: str) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    total = size * size
    if category == "big":
        return _shape_with_area(rng, yy, xx, size, rng.uniform(0.55, 0.8) * total)
    if category == "mid":
        return _shape_with_area(rng, yy, xx, size, rng.uniform(0.28, 0.45) * total)
    if category == "small":
        return _shape_with_area(rng, yy, xx, size, rng.uniform(0.02, 0.18) * total)
    if category == "narrow":
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 3)):
            angle = rng.uniform(0, np.pi)
            width = rng.uniform(0.04, 0.08) * size
            length = rng.uniform(0.5, 0.9) * size
            cy, cx = rng.uniform(0.3 * size, 0.7 * size, 2)
            mask |= _box(yy, xx, cy, cx, width / 2, length / 2, angle)
        return mask
    if category == "multiple":
        mask = np.zeros((size, size), dtype=bool)
        count = rng.integers(2, 6)
        for _ in range(count):
            mask |= _shape_with_area(rng, yy, xx, size, rng.uniform(0.02, 0.08) * total)
        return mask
    raise ValueError(f"unknown category {category!r}")


def render_item(rng: np.random.Generator, size: int, category: str) -> DatasetItem:
    mask = _render_mask(rng, size, category)
    if not mask.any():
        mask[size // 2, size // 2] = True
    img = _background(rng, size)
    fg = _foreground_color(rng)[None, None, :] * (0.85 + 0.15 * _smooth_noise(rng, size, 8)[:, :, None])
    img = np.where(mask[:, :, None], fg, img)
    img = np.clip(img + rng.normal(0.0, 0.015, img.shape), 0.0, 1.0)
    image = np.rint(img * 255).astype(np.uint8)
    mask_u8 = np.where(mask, 255, 0).astype(np.uint8)
    return DatasetItem(image, mask_u8, float(np.count_nonzero(mask_u8 > 127)) / (size * size), category)


def gen_data(out_dir, count: int, size: int, seed: int) -> list[DatasetItem]:
    """Write image_####.png, mask_####.png and index.csv into ``out_dir``."""
    if size <= 0 or size % 32:
        raise ValueError(f"size must be a positive multiple of 32, got {size}")
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc.strerror}") from exc
    items = []
    rows = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        item = render_item(rng, size, CATEGORIES[i % len(CATEGORIES)])
        items.append(item)
        img_name, mask_name = f"image_{i:04d}.png", f"mask_{i:04d}.png"
        write_png(out / img_name, item.image)
        write_png(out / mask_name, item.mask)
        rows.append((img_name, mask_name, f"{item.proportion:.10f}", item.category))
    index = out / INDEX_NAME
    try:
        with open(index, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("image", "mask", "proportion", "category"))
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {index}: {exc.strerror}") from exc
    return items


def write_png(path: Path, array: np.ndarray) -> None:
    try:
        Image.fromarray(array).save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_gray(path) -> np.ndarray:
    """8-bit grayscale file as a uint8 (H, W) array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def read_rgb(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float in [0, 1]
    masks: np.ndarray  # (N, 1, H, W) float in {0, 1}
    names: list[str]

    def __len__(self) -> int:
        return len(self.names)


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    index = data_dir / INDEX_NAME
    if not index.is_file():
        raise OSError(f"dataset index not found: {index}")
    with open(index, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise OSError(f"dataset index is empty: {index}")
    images, masks, names = [], [], []
    for row in rows:
        img = read_rgb(data_dir / row["image"]).astype(np.float64) / 255.0
        mask = (read_gray(data_dir / row["mask"]) > 127).astype(np.float64)
        if img.shape[:2] != mask.shape:
            raise OSError(f"{row['image']} and {row['mask']} differ in size")
        images.append(img.transpose(2, 0, 1))
        masks.append(mask[None])
        names.append(row["image"])
    return Dataset(np.stack(images), np.stack(masks), names)


def augment(rng: np.random.Generator, image: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Random flips, 90-degree rotation and crop-and-resize on one (C, H, W) pair."""
    if rng.random() < 0.5:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    if rng.random() < 0.5:
        image, mask = image[:, ::-1, :], mask[:, ::-1, :]
    k = int(rng.integers(4))
    image, mask = np.rot90(image, k, axes=(1, 2)), np.rot90(mask, k, axes=(1, 2))
    if rng.random() < 0.5:
        size = image.shape[1]
        crop = int(rng.integers(int(0.8 * size), size + 1))
        y0, x0 = rng.integers(0, size - crop + 1, 2)
        idx = (np.arange(size) * crop) // size
        image = image[:, y0 + idx][:, :, x0 + idx]
        mask = mask[:, y0 + idx][:, :, x0 + idx]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)

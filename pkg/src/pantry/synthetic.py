"""Generated stand-in dataset: colored geometric patterns on noisy backgrounds."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from pantry.errors import ArgumentError

PATTERNS = (
    "disc",
    "square",
    "triangle",
    "ring",
    "plus",
    "horizontal_stripes",
    "vertical_stripes",
    "diagonal_stripes",
)


def _mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.35, 0.65, size=2) * size
    r = rng.uniform(0.2, 0.32) * size
    period = rng.uniform(4.0, 7.0)
    phase = rng.uniform(0, period)
    if kind == "disc":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "square":
        return (np.abs(yy - cy) <= r * 0.85) & (np.abs(xx - cx) <= r * 0.85)
    if kind == "triangle":
        top = cy - r
        inside_y = (yy >= top) & (yy <= cy + r)
        half = (yy - top) / 2.0
        return inside_y & (np.abs(xx - cx) <= half)
    if kind == "ring":
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "plus":
        arm = max(1.5, r * 0.3)
        return ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)) | ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r))
    if kind == "horizontal_stripes":
        return ((yy + phase) % period) < period / 2
    if kind == "vertical_stripes":
        return ((xx + phase) % period) < period / 2
    if kind == "diagonal_stripes":
        return ((xx + yy + phase) % (period * 1.4)) < period * 0.7
    raise ArgumentError(f"unknown pattern {kind!r}")


def make_pattern(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One ``size x size x 3`` uint8 image of the given pattern."""
    mask = _mask(kind, size, rng)
    bg = rng.uniform(0.0, 0.35, size=3)
    fg = rng.uniform(0.55, 1.0, size=3)
    img = np.where(mask[..., None], fg, bg)
    img = img + rng.normal(0.0, 0.04, size=img.shape)
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def make_dataset(per_class: int = 100, size: int = 32, seed: int = 0, classes=PATTERNS):
    """Return ``(images, labels)``: uint8 ``N x size x size x 3`` and int class indices."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, kind in enumerate(classes):
        for _ in range(per_class):
            images.append(make_pattern(kind, size, rng))
            labels.append(label)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def write_dataset(root, per_class: int = 100, size: int = 32, seed: int = 0, classes=PATTERNS) -> Path:
    """Write PPM images, ``labels.txt`` and a ``manifest.csv``; returns the manifest path."""
    from pantry.imaging import save_ppm

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    images, labels = make_dataset(per_class, size, seed, classes)
    (root / "labels.txt").write_text("\n".join(classes) + "\n")
    rows = ["path,label"]
    for i, (img, lab) in enumerate(zip(images, labels)):
        rel = f"images/{classes[lab]}_{i:05d}.ppm"
        save_ppm(root / rel, img)
        rows.append(f"{rel},{classes[lab]}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


def make_splits(per_class: int = 100, size: int = 32, seed: int = 0, classes=PATTERNS,
                ratios=(0.7, 0.2, 0.1)) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Generate a dataset and split it per class with the manifest rounding rule.

    Returns ``{"train" | "test" | "val": (images N x 3 x size x size float32, one_hot)}``.
    """
    from pantry.dataset import ClassLabels, DatasetManifest, Record, split_dataset

    images, labels = make_dataset(per_class, size, seed, classes)
    names = ClassLabels(classes)
    manifest = DatasetManifest([Record(str(i), classes[lab]) for i, lab in enumerate(labels)], names)
    tags = [r.split for r in split_dataset(manifest, ratios, seed).records]
    x = images.transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    y = np.eye(len(classes), dtype=np.float32)[labels]
    out = {}
    for split in ("train", "test", "val"):
        idx = np.array([i for i, t in enumerate(tags) if t == split], dtype=np.intp)
        out[split] = (np.ascontiguousarray(x[idx]), y[idx])
    return out

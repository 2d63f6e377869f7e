"""Class labels, CSV manifests, stratified splitting and batch streams."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from pantry import imaging
from pantry.errors import ArgumentError, ConfigError, ValidationError
from pantry.tensor.core import Tensor

SPLITS = ("train", "test", "val")
DEFAULT_RATIOS = (0.70, 0.20, 0.10)
CANONICAL_COUNT = 32


def _key(name: str) -> str:
    return " ".join(name.split()).casefold()


class ClassLabels:
    """Ordered, unique class names with case-insensitive lookup."""

    def __init__(self, names: Sequence[str], expected_count: int | None = None):
        names = [n.strip() for n in names if n.strip()]
        if expected_count is not None and len(names) != expected_count:
            raise ValidationError(f"expected {expected_count} class names, got {len(names)}")
        if not names:
            raise ValidationError("label list is empty")
        self.names = names
        self._index: dict[str, int] = {}
        for i, n in enumerate(names):
            k = _key(n)
            if k in self._index:
                raise ValidationError(f"duplicate class name {n!r}")
            self._index[k] = i

    @classmethod
    def from_file(cls, path, expected_count: int | None = None) -> "ClassLabels":
        return cls(Path(path).read_text(encoding="utf-8").splitlines(), expected_count)

    @classmethod
    def canonical(cls, data_dir=None) -> "ClassLabels":
        """The 32 ingredient classes, from ``data_dir/labels.txt`` or the bundled file."""
        if data_dir is not None and (Path(data_dir) / "labels.txt").exists():
            return cls.from_file(Path(data_dir) / "labels.txt", CANONICAL_COUNT)
        text = resources.files("pantry").joinpath("data/labels.txt").read_text(encoding="utf-8")
        return cls(text.splitlines(), CANONICAL_COUNT)

    def index(self, name: str) -> int:
        try:
            return self._index[_key(name)]
        except KeyError:
            raise ArgumentError(f"unknown label {name!r}") from None

    def resolve(self, name: str) -> str:
        return self.names[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return _key(name) in self._index

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)


def one_hot(label: str | int, labels: ClassLabels | None = None) -> np.ndarray:
    labels = labels or ClassLabels.canonical()
    if isinstance(label, (int, np.integer)):
        if not 0 <= label < len(labels):
            raise ArgumentError(f"label index {label} out of range for {len(labels)} classes")
        idx = int(label)
    else:
        idx = labels.index(label)
    vec = np.zeros(len(labels), dtype=np.float32)
    vec[idx] = 1.0
    return vec


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    split: str | None = None


@dataclass
class DatasetManifest:
    records: list[Record]
    labels: ClassLabels
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def resolve_path(self, record: Record) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict[str, int]:
        return {s: sum(r.split == s for r in self.records) for s in SPLITS}


def load_manifest(path, labels: ClassLabels | None = None) -> DatasetManifest:
    """Read a ``path,label[,split]`` CSV; relative image paths resolve against its directory."""
    path = Path(path)
    labels = labels or ClassLabels.canonical()
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ArgumentError(f"{path}: manifest is empty")
    header = [h.strip().lower() for h in rows[0]]
    if header[:2] != ["path", "label"] or len(header) > 3 or (len(header) == 3 and header[2] != "split"):
        raise ValidationError(f"{path}: header must be 'path,label' (optionally ',split'), got {rows[0]}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        p, lab = row[0].strip(), row[1].strip()
        if not p:
            raise ValidationError(f"{path}:{lineno}: empty image path")
        if lab not in labels:
            raise ValidationError(f"{path}:{lineno}: unknown label {lab!r}")
        split = row[2].strip() if len(row) == 3 else None
        if split is not None and split not in SPLITS:
            raise ValidationError(f"{path}:{lineno}: unknown split {split!r}")
        records.append(Record(p, labels.resolve(lab), split))
    if not records:
        raise ArgumentError(f"{path}: manifest has no records")
    return DatasetManifest(records, labels, path.parent)


def write_split_csv(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for r in manifest.records:
            writer.writerow([r.path, r.label, r.split or ""])


def split_sizes(n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Per-class (train, test, val) sizes.

    Cut points are floors of cumulative ratios taken from the small end
    (val, then val+test), so each of the two smaller splits is within one
    record of its exact share and the remainder lands in train.
    """
    _, r_test, r_val = ratios
    eps = 1e-9
    n_val = math.floor(n * r_val + eps)
    n_test = math.floor(n * (r_val + r_test) + eps) - n_val
    return n - n_val - n_test, n_test, n_val


def split_dataset(manifest: DatasetManifest, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> DatasetManifest:
    """Stratified train/test/val assignment, shuffled per class by ``seed``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ArgumentError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not manifest.records:
        raise ArgumentError("cannot split an empty manifest")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_class.setdefault(r.label, []).append(i)
    tags: list[str | None] = [None] * len(manifest.records)
    for label in manifest.labels:
        members = by_class.get(label)
        if not members:
            continue
        if len(members) < 3:
            warnings.warn(f"class {label!r} has {len(members)} samples; some splits will be empty for it", stacklevel=2)
        order = [members[j] for j in rng.permutation(len(members))]
        n_train, n_test, _ = split_sizes(len(order), ratios)
        for pos, idx in enumerate(order):
            tags[idx] = "train" if pos < n_train else "test" if pos < n_train + n_test else "val"
    records = [replace(r, split=t) for r, t in zip(manifest.records, tags)]
    return DatasetManifest(records, manifest.labels, manifest.root)


def _load_sample(manifest, record, image_size, augment_params=None, augment_first=False):
    path = manifest.resolve_path(record)
    img = imaging.load_image(path)
    if augment_params is not None and augment_first:
        img = imaging.augment(img, augment_params)
    if img.shape[:2] != (image_size, image_size):
        img = imaging.resize_bilinear(img, image_size, image_size)
    if augment_params is not None and not augment_first:
        img = imaging.augment(img, augment_params)
    return imaging.to_chw(img)


def batches(manifest: DatasetManifest, split: str, batch_size: int, seed: int = 0, augment: bool = False,
            epoch: int = 0, image_size: int = 224, augment_first: bool = False) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield ``(images N x 3 x S x S, one_hot N x K)`` for one epoch of ``split``.

    Order is a permutation drawn from ``(seed, epoch)``. Augmentation is keyed
    by ``(seed, epoch * len(split) + position)`` and allowed on train only.
    It runs on the resized image unless ``augment_first`` is set.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    if augment and split != "train":
        raise ConfigError(f"augmentation is only allowed on the train split, not {split!r}")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    records = manifest.split(split)
    order = np.random.default_rng([seed, epoch]).permutation(len(records))
    for start in range(0, len(records), batch_size):
        chunk = order[start:start + batch_size]
        xs, ys = [], []
        for pos in chunk:
            rec = records[pos]
            params = imaging.sample_params(seed, epoch * len(records) + int(pos)) if augment else None
            xs.append(_load_sample(manifest, rec, image_size, params, augment_first))
            ys.append(one_hot(rec.label, manifest.labels))
        yield Tensor(np.stack(xs)), np.stack(ys)


def load_arrays(manifest: DatasetManifest, split: str | None, image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """All images of a split (or the whole manifest when ``split`` is None) in record order."""
    records = manifest.records if split is None else manifest.split(split)
    if not records:
        raise ArgumentError(f"split {split!r} has no records")
    x = np.stack([_load_sample(manifest, r, image_size) for r in records])
    y = np.stack([one_hot(r.label, manifest.labels) for r in records])
    return x, y

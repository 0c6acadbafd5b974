"""Datasets: CIFAR-100 binary records, a synthetic texture set, and batching."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetFormatError

RECORD_BYTES = 3074
IMAGE_SHAPE = (3, 32, 32)
SPLIT_SIZES = {"train": 50000, "test": 10000}
PREFETCH_ENV = "LGNN_PREFETCH_THREADS"

CIFAR100_FINE_LABELS = (
    "apple aquarium_fish baby bear beaver bed bee beetle bicycle bottle bowl boy bridge bus "
    "butterfly camel can castle caterpillar cattle chair chimpanzee clock cloud cockroach couch "
    "crab crocodile cup dinosaur dolphin elephant flatfish forest fox girl hamster house kangaroo "
    "keyboard lamp lawn_mower leopard lion lizard lobster man maple_tree motorcycle mountain mouse "
    "mushroom oak_tree orange orchid otter palm_tree pear pickup_truck pine_tree plain plate poppy "
    "porcupine possum rabbit raccoon ray road rocket rose sea seal shark shrew skunk skyscraper "
    "snail snake spider squirrel streetcar sunflower sweet_pepper table tank telephone television "
    "tiger tractor train trout tulip turtle wardrobe whale willow_tree wolf woman worm"
).split()


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32 in [0, 1]
    fine_labels: np.ndarray
    coarse_labels: np.ndarray
    split: str = "train"
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.fine_labels = np.asarray(self.fine_labels, dtype=np.int64)
        self.coarse_labels = np.asarray(self.coarse_labels, dtype=np.int64)
        if not len(self.images) == len(self.fine_labels) == len(self.coarse_labels):
            raise DatasetFormatError("image and label counts differ")

    def __len__(self):
        return len(self.images)

    @property
    def labels(self):
        return self.fine_labels

    def class_index(self, name) -> int:
        if isinstance(name, (int, np.integer)) or str(name).isdigit():
            return int(name)
        try:
            return self.class_names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}") from None

    def of_class(self, name) -> np.ndarray:
        return self.images[self.fine_labels == self.class_index(name)]

    def subset(self, classes) -> "Dataset":
        """Keep only ``classes`` (names or indices) and relabel them ``0..k-1``."""
        idx = [self.class_index(c) for c in classes]
        remap = {c: i for i, c in enumerate(idx)}
        keep = np.isin(self.fine_labels, idx)
        names = [self.class_names[c] if c < len(self.class_names) else str(c) for c in idx]
        return Dataset(self.images[keep],
                       np.array([remap[c] for c in self.fine_labels[keep]], dtype=np.int64),
                       self.coarse_labels[keep], self.split, names)


def decode_records(blob: bytes, split: str = "train") -> Dataset:
    if len(blob) % RECORD_BYTES:
        raise DatasetFormatError(
            f"size {len(blob)} is not a multiple of the {RECORD_BYTES}-byte record")
    rec = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    coarse, fine = rec[:, 0].astype(np.int64), rec[:, 1].astype(np.int64)
    if (coarse >= 20).any() or (fine >= 100).any():
        raise DatasetFormatError("label byte out of range")
    images = rec[:, 2:].reshape(-1, *IMAGE_SHAPE).astype(np.float32) / np.float32(255)
    return Dataset(images, fine, coarse, split, list(CIFAR100_FINE_LABELS))


def encode_records(ds: Dataset) -> bytes:
    """Inverse of :func:`decode_records` (pixels rounded to the nearest byte)."""
    n = len(ds)
    rec = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = ds.coarse_labels
    rec[:, 1] = ds.fine_labels
    pix = np.rint(np.clip(ds.images, 0, 1) * 255).astype(np.uint8)
    rec[:, 2:] = pix.reshape(n, -1)
    return rec.tobytes()


def _split_file(path, split):
    path = Path(path)
    if path.is_dir():
        for cand in (path / f"{split}.bin", path / "cifar-100-binary" / f"{split}.bin"):
            if cand.exists():
                return cand
        raise FileNotFoundError(f"no {split}.bin under {path}")
    return path


def load_cifar100(path, split: str = "train", strict: bool = True) -> Dataset:
    """Read a CIFAR-100 binary split (a file, or a directory holding ``<split>.bin``).

    With ``strict`` the record count must equal the published split size.
    """
    f = _split_file(path, split)
    ds = decode_records(f.read_bytes(), split)
    if strict and split in SPLIT_SIZES and len(ds) != SPLIT_SIZES[split]:
        raise DatasetFormatError(
            f"{f} holds {len(ds)} records, the {split} split has {SPLIT_SIZES[split]}")
    names_file = f.parent / "fine_label_names.txt"
    if names_file.exists():
        ds.class_names = [s for s in names_file.read_text().split() if s]
    return ds


def synthetic_blobs(classes: int = 4, per_class: int = 100, seed: int = 0,
                    noise: float = 0.15, split: str = "train") -> Dataset:
    """Class-dependent oriented gratings inside a soft random patch, plus noise.

    Class ``c`` uses orientation ``pi * c / classes`` and a class-specific
    spatial frequency; position, phase, tint and noise are random.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float32)
    images = np.empty((n, *IMAGE_SHAPE), dtype=np.float32)
    for i, c in enumerate(labels):
        theta = np.pi * c / classes
        freq = 0.12 + 0.06 * (c % 3)
        cy, cx = rng.uniform(10, 22, size=2)
        radius = rng.uniform(7, 11)
        phase = rng.uniform(0, 2 * np.pi)
        tint = rng.uniform(0.4, 1.0, size=3)
        env = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
        wave = np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        patch = 0.5 + 0.4 * env * wave
        img = patch[None] * tint[:, None, None] + noise * rng.standard_normal(IMAGE_SHAPE)
        images[i] = np.clip(img, 0, 1)
    names = [f"blob{c}" for c in range(classes)]
    return Dataset(images, labels, labels // 5, split, names)


def channel_stats(ds: Dataset):
    """Per-channel mean and standard deviation over the whole split."""
    if len(ds) == 0:
        return np.zeros(3, np.float32), np.ones(3, np.float32)
    x = ds.images.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    std[std == 0] = 1.0
    return mean.astype(np.float32), std.astype(np.float32)


def normalize(images, mean, std):
    mean = np.asarray(mean, np.float32)[None, :, None, None]
    std = np.asarray(std, np.float32)[None, :, None, None]
    return ((images - mean) / std).astype(np.float32)


def augment(images, rng: np.random.Generator, pad: int = 4):
    """Random crop from a reflect-padded image plus random horizontal flip."""
    b, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.empty_like(images)
    offs = rng.integers(0, 2 * pad + 1, size=(b, 2))
    flips = rng.random(b) < 0.5
    for i in range(b):
        y, x = offs[i]
        crop = padded[i, :, y:y + h, x:x + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def prefetch_threads() -> int:
    try:
        return max(0, int(os.environ.get(PREFETCH_ENV, "0")))
    except ValueError:
        return 0


def batches(ds: Dataset, batch_size: int, shuffle: bool = False, seed: int = 0,
            augment_data: bool = False, mean=None, std=None, threads: int | None = None):
    """Yield ``(images, labels)`` batches in a seed-determined order.

    Per-batch augmentation seeds are drawn up front, so the stream is the same
    whether batches are prepared inline or on ``threads`` prefetch workers.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(ds)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n) if shuffle else np.arange(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    seeds = np.random.SeedSequence(seed).spawn(len(chunks))

    def prepare(k):
        idx = chunks[k]
        x = ds.images[idx]
        if augment_data:
            x = augment(x, np.random.default_rng(seeds[k]))
        if mean is not None:
            x = normalize(x, mean, std)
        return x, ds.fine_labels[idx]

    threads = prefetch_threads() if threads is None else threads
    if threads <= 0:
        for k in range(len(chunks)):
            yield prepare(k)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # executor.map preserves submission order
        yield from pool.map(prepare, range(len(chunks)))

#!/usr/bin/env python3
"""Labelled image datasets: CSV ingestion, seeded splits and synthetic data.

A dataset CSV row holds 28*28*4 = 3136 pixel intensities, row-major over
(height, width, channel), followed by the class label. Files ending in
``.gz`` are read and written gzip-compressed.
"""

import logging
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from quanvnet.errors import ArgumentError, ParseError, ShapeError

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (28, 28, 4)
NUM_CLASSES = 4
CLASS_NAMES = ("barren", "trees", "grassland", "other")

_FIELDS_ERROR = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        images = np.array(self.images, dtype=np.uint8)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            raise ShapeError(f"images must be (count, height, width, channels), got shape {images.shape}")
        if images.shape[0] != labels.shape[0]:
            raise ShapeError(f"{images.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise ArgumentError(f"labels must lie in 0..{NUM_CLASSES - 1}")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


def load_csv(path: str, image_shape: Tuple[int, int, int] = IMAGE_SHAPE) -> Dataset:
    """Read and validate a dataset CSV

    Args:
        path (str): CSV file, optionally ``.gz``
        image_shape (Tuple[int, int, int]): Per-image (height, width, channels)

    Returns:
        Dataset: Rows in file order
    """
    width = int(np.prod(image_shape)) + 1
    try:
        # explicit names keep the first row from fixing the column count
        frame = pd.read_csv(
            path, header=None, names=list(range(width)), compression="infer", skip_blank_lines=True
        )
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} holds no records") from e
    except pd.errors.ParserError as e:
        match = _FIELDS_ERROR.search(str(e))
        if match:
            raise ParseError(
                f"expected {width} fields, saw {match.group(3)}", row=int(match.group(2))
            ) from e
        raise ParseError(str(e)) from e
    except OSError as e:
        logger.error(f"Error loading dataset {path}: {e}")
        raise

    if frame.empty:
        raise ParseError(f"{path} holds no records")
    if not isinstance(frame.index, pd.RangeIndex):
        # pandas turns surplus leading fields of the first row into an index
        raise ParseError(f"expected {width} fields, saw more", row=1)
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)

    missing = np.isnan(values).any(axis=1)
    if missing.any():
        raise ParseError(f"expected {width} integer fields", row=int(np.argmax(missing)) + 1)
    fractional = (values != np.floor(values)).any(axis=1)
    if fractional.any():
        raise ParseError("fields must be integers", row=int(np.argmax(fractional)) + 1)
    pixels, labels = values[:, :-1], values[:, -1]
    out_of_range = ((pixels < 0) | (pixels > 255)).any(axis=1)
    if out_of_range.any():
        raise ParseError("pixel values must lie in [0, 255]", row=int(np.argmax(out_of_range)) + 1)
    bad_label = (labels < 0) | (labels >= NUM_CLASSES)
    if bad_label.any():
        raise ParseError(f"label must lie in 0..{NUM_CLASSES - 1}", row=int(np.argmax(bad_label)) + 1)

    logger.info(f"Loaded {len(labels)} images from {path}")
    return Dataset(pixels.reshape((-1,) + tuple(image_shape)), labels.astype(np.int64))


def save_csv(dataset: Dataset, path: str) -> None:
    """Write a dataset CSV, gzip-compressed when the path ends in .gz"""
    flat = dataset.images.reshape(len(dataset), -1).astype(np.int64)
    frame = pd.DataFrame(np.column_stack([flat, dataset.labels]))
    # fixed mtime keeps gzip output byte-identical across runs
    compression = {"method": "gzip", "mtime": 0} if path.endswith(".gz") else None
    try:
        frame.to_csv(path, header=False, index=False, compression=compression)
    except OSError as e:
        logger.error(f"Error saving dataset {path}: {e}")
        raise


def split_indices(size: int, n_train: int, n_test: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded permutation cut into a train prefix and the test slice after it"""
    if n_train < 0 or n_test < 0:
        raise ArgumentError("split sizes must be >= 0")
    if n_train + n_test > size:
        raise ArgumentError(f"cannot draw {n_train} + {n_test} records from {size}")
    order = np.random.default_rng(seed).permutation(size)
    return order[:n_train], order[n_train:n_train + n_test]


def split(dataset: Dataset, n_train: int, n_test: int, seed: int) -> Tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(len(dataset), n_train, n_test, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


@dataclass(frozen=True)
class ClassSignature:
    label: int
    channel_means: Tuple[float, float, float, float]
    texture: str


@dataclass(frozen=True)
class SyntheticSpec:
    """Every constant of the synthetic generator"""

    signatures: Tuple[ClassSignature, ...] = (
        ClassSignature(0, (200.0, 185.0, 170.0, 210.0), "none"),
        ClassSignature(1, (50.0, 75.0, 45.0, 80.0), "diagonal"),
        ClassSignature(2, (130.0, 160.0, 110.0, 150.0), "horizontal"),
        ClassSignature(3, (95.0, 90.0, 120.0, 100.0), "vertical"),
    )
    stripe_amplitude: float = 25.0
    stripe_width: int = 2
    brightness_jitter: float = 8.0
    pixel_noise: float = 12.0
    image_shape: Tuple[int, int, int] = IMAGE_SHAPE


SYNTHETIC = SyntheticSpec()


def _texture(kind: str, height: int, width: int, stripe_width: int) -> np.ndarray:
    rows, cols = np.indices((height, width))
    if kind == "none":
        return np.zeros((height, width))
    if kind == "diagonal":
        phase = (rows + cols) // stripe_width
    elif kind == "horizontal":
        phase = rows // stripe_width
    elif kind == "vertical":
        phase = cols // stripe_width
    else:
        raise ArgumentError(f"unknown texture '{kind}'")
    return np.where(phase % 2 == 0, 1.0, -1.0)


def generate_synthetic(count_per_class: int, seed: int, spec: Optional[SyntheticSpec] = None) -> Dataset:
    """Four-class images separable by brightness and stripe orientation

    Args:
        count_per_class (int): Images generated per label
        seed (int): Generator seed
        spec (SyntheticSpec, optional): Class signatures and noise levels

    Returns:
        Dataset: Labels interleaved 0, 1, 2, 3, 0, ...
    """
    if count_per_class < 1:
        raise ArgumentError(f"count per class must be >= 1, got {count_per_class}")
    spec = spec or SYNTHETIC
    height, width, channels = spec.image_shape
    rng = np.random.default_rng(seed)
    textures = [_texture(s.texture, height, width, spec.stripe_width) for s in spec.signatures]

    images, labels = [], []
    for _ in range(count_per_class):
        for signature, texture in zip(spec.signatures, textures):
            base = np.asarray(signature.channel_means) + rng.normal(0.0, spec.brightness_jitter)
            image = (
                base[np.newaxis, np.newaxis, :]
                + spec.stripe_amplitude * texture[:, :, np.newaxis]
                + rng.normal(0.0, spec.pixel_noise, size=(height, width, channels))
            )
            images.append(np.clip(np.rint(image), 0, 255).astype(np.uint8))
            labels.append(signature.label)
    return Dataset(np.stack(images), np.asarray(labels))

#!/usr/bin/env python3
"""CSV outputs, feature-cache reload and model checkpoints.

Checkpoint layout: ``QNCK`` magic, little-endian uint32 version, uint32
header length, UTF-8 JSON header naming every parameter and its shape, then
the parameters as one little-endian float64 vector.
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from quanvnet.data import Dataset
from quanvnet.errors import EmptyInputError, ParseError, ShapeError
from quanvnet.featcache import DEFAULT_LEAF_SIZE, DynamicMapper
from quanvnet.nn import MetricRow, Network
from quanvnet.quanv import DEFAULT_STRIDE, DEFAULT_WINDOW, FeatureMap, blocks_per_side, tile_image

logger = logging.getLogger(__name__)

FEATURE_COLUMNS = ["image_index", "block_row", "block_col", "filter_id", "value", "exact"]
CACHE_STATS_COLUMNS = ["budget", "total_blocks", "distinct_blocks", "exact_count", "mapped_count"]
METRIC_COLUMNS = ["iteration", "train_loss", "test_accuracy", "model_id", "model_kind"]
APPENDIX_COLUMNS = ["theta", "beta", "analytic", "simulated", "abs_delta"]

CHECKPOINT_MAGIC = b"QNCK"
CHECKPOINT_VERSION = 1

MetricStream = Tuple[str, str, Sequence[MetricRow]]


@dataclass(frozen=True)
class CacheStats:
    budget: int
    total_blocks: int
    distinct_blocks: int
    exact_count: int
    mapped_count: int


def _write_frame(frame: pd.DataFrame, path: str, what: str) -> None:
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        logger.error(f"Error writing {what} {path}: {e}")
        raise


def _read_frame(path: str, columns: List[str], what: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        logger.error(f"Error reading {what} {path}: {e}")
        raise
    if list(frame.columns) != columns:
        raise ParseError(f"{path}: expected columns {columns}, got {list(frame.columns)}")
    return frame


def write_features(path: str, image_indices: Sequence[int], feature_maps: Sequence[FeatureMap]) -> int:
    """Write feature maps as one row per (image, block, filter)

    Args:
        path (str): Output CSV
        image_indices (Sequence[int]): Dataset row of each feature map
        feature_maps (Sequence[FeatureMap]): Maps to write; a missing exact mask counts as all exact

    Returns:
        int: Number of rows written
    """
    if len(image_indices) != len(feature_maps):
        raise ShapeError(f"{len(image_indices)} image indices but {len(feature_maps)} feature maps")
    parts = []
    for image_index, fmap in sorted(zip(image_indices, feature_maps), key=lambda pair: pair[0]):
        rows, cols, width = fmap.shape
        r, c, f = np.meshgrid(np.arange(rows), np.arange(cols), np.arange(width), indexing="ij")
        exact = np.ones((rows, cols), dtype=bool) if fmap.exact is None else fmap.exact
        parts.append(pd.DataFrame({
            "image_index": int(image_index),
            "block_row": r.reshape(-1),
            "block_col": c.reshape(-1),
            "filter_id": f.reshape(-1),
            "value": fmap.grid.reshape(-1),
            "exact": np.repeat(exact.reshape(-1), width).astype(np.int64),
        }))
    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=FEATURE_COLUMNS)
    _write_frame(frame[FEATURE_COLUMNS], path, "features")
    return len(frame)


def read_features(path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature grids back from CSV

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: image indices (N,), grids
            (N, rows, cols, filters) and exact masks (N, rows, cols)
    """
    frame = _read_frame(path, FEATURE_COLUMNS, "features")
    if frame.empty:
        raise ParseError(f"{path} holds no feature rows")
    frame = frame.sort_values(["image_index", "block_row", "block_col", "filter_id"], kind="stable")
    images = np.unique(frame["image_index"].to_numpy())
    shape = (
        len(images),
        int(frame["block_row"].max()) + 1,
        int(frame["block_col"].max()) + 1,
        int(frame["filter_id"].max()) + 1,
    )
    if len(frame) != int(np.prod(shape)):
        raise ParseError(f"{path}: {len(frame)} rows do not form complete {shape[1:]} grids")
    grids = frame["value"].to_numpy(dtype=np.float64).reshape(shape)
    exact = frame["exact"].to_numpy().reshape(shape)[..., 0].astype(bool)
    return images, grids, exact


def load_feature_cache(
    path: str,
    dataset: Dataset,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    leaf_size: int = DEFAULT_LEAF_SIZE,
) -> DynamicMapper:
    """Rebuild the mapper of a feature CSV from the blocks it evaluated exactly

    The CSV stores records, not blocks: each exact row is re-identified by
    tiling its image from the dataset the features were computed on.

    Args:
        path (str): Feature CSV written by ``write_features``
        dataset (Dataset): Dataset the image indices refer to
        window (int): Block side used for the features
        stride (int): Block offset used for the features
        leaf_size (int): Balltree leaf size

    Returns:
        DynamicMapper: Mapper holding every exact block and its record, budget spent
    """
    images, grids, exact = read_features(path)
    height, width = dataset.images.shape[1:3]
    rows, cols = blocks_per_side(height, window, stride), blocks_per_side(width, window, stride)
    if grids.shape[1:3] != (rows, cols):
        raise ShapeError(f"{path}: {grids.shape[1:3]} block grids, expected {(rows, cols)}")
    if images.max() >= len(dataset):
        raise ShapeError(f"{path}: image index {int(images.max())} outside a dataset of {len(dataset)}")

    points, payloads = [], []
    for n, image_index in enumerate(images):
        blocks = tile_image(dataset.images[int(image_index)], window, stride)
        for block in blocks:
            if exact[n, block.row, block.col]:
                points.append(block.values)
                payloads.append(grids[n, block.row, block.col])
    if not points:
        raise EmptyInputError(f"{path} holds no exactly evaluated blocks")
    mapper = DynamicMapper.from_records(np.stack(points), np.stack(payloads), leaf_size=leaf_size)
    logger.info(f"Rebuilt feature cache from {path}: {mapper.exact_count} processed blocks")
    return mapper


def write_cache_stats(path: str, stats: CacheStats) -> None:
    _write_frame(pd.DataFrame([asdict(stats)], columns=CACHE_STATS_COLUMNS), path, "cache stats")


def write_metrics(path: str, streams: Sequence[MetricStream]) -> None:
    """Write metric streams, each tagged with its model id and kind"""
    records = [
        {**asdict(row), "model_id": model_id, "model_kind": kind}
        for model_id, kind, rows in streams
        for row in rows
    ]
    _write_frame(pd.DataFrame(records, columns=METRIC_COLUMNS), path, "metrics")


def read_metrics(path: str) -> pd.DataFrame:
    return _read_frame(path, METRIC_COLUMNS, "metrics")


def write_appendix(path: str, rows: Sequence[Tuple[float, float, float, float, float]]) -> None:
    _write_frame(pd.DataFrame(list(rows), columns=APPENDIX_COLUMNS), path, "appendix sweep")


def save_checkpoint(net: Network, path: str) -> None:
    params = net.parameters()
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "model_kind": net.kind,
        "parameters": [[name, list(value.shape)] for name, value in params],
    }).encode("utf-8")
    flat = np.concatenate([value.reshape(-1) for _, value in params]).astype("<f8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(np.array([CHECKPOINT_VERSION, len(header)], dtype="<u4").tobytes())
            f.write(header)
            f.write(flat.tobytes())
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        raise


def load_checkpoint(net: Network, path: str) -> Network:
    """Copy checkpointed parameters into a network of the same architecture"""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path} is not a checkpoint")
    version, header_len = (int(v) for v in np.frombuffer(blob[4:12], dtype="<u4"))
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    flat = np.frombuffer(blob[12 + header_len:], dtype="<f8")

    params = net.parameters()
    expected = [[name, list(value.shape)] for name, value in params]
    if header["parameters"] != expected:
        raise ShapeError(f"{path}: checkpoint parameters do not match the network")
    if flat.size != sum(value.size for _, value in params):
        raise ParseError(f"{path}: truncated parameter data")
    offset = 0
    for _, value in params:
        value[...] = flat[offset:offset + value.size].reshape(value.shape)
        offset += value.size
    return net

#!/usr/bin/env python3
"""Quanvolutional layer: tile, encode, run QAOA filters, decode.

An image (height, width, channels) of 8-bit intensities is cut into complete
window x window blocks at stride offsets. Each block is flattened row-major
over (height, width, channel), normalized to [0, 1], averaged in consecutive
groups and scaled by pi to give one rotation angle per circuit parameter.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from quanvnet.errors import ArgumentError, ShapeError
from quanvnet.qaoa import (
    DeviceTopology,
    QaoaAnsatz,
    WeightedGraph,
    build_qaoa_circuit,
    random_weighted_graph,
)
from quanvnet.statevector import (
    apply_circuit,
    exact_probabilities,
    histogram_frequencies,
    marginal_ones,
    pair_agreement,
    sample_shots,
    zero_state,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 5
DEFAULT_STRIDE = 5
DEFAULT_GROUP_SIZE = 4
DEFAULT_SHOTS = 1000
PIXEL_MAX = 255.0


class FilterMode(str, Enum):
    EXACT = "exact"
    SHOTS = "shots"


class Decoder(str, Enum):
    ONES = "ones"
    AGREEMENT = "agreement"


@dataclass(frozen=True, eq=False)
class TensorBlock:
    row: int
    col: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ArgumentError("block values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class QuanvFilter:
    id: int
    graph: WeightedGraph
    p: int = 1
    shots: int = DEFAULT_SHOTS
    seed: int = 0
    decoder: Decoder = Decoder.ONES

    def __post_init__(self):
        object.__setattr__(self, "decoder", Decoder(self.decoder))
        if self.shots < 1:
            raise ArgumentError(f"shots must be >= 1, got {self.shots}")

    @property
    def ansatz(self) -> QaoaAnsatz:
        return QaoaAnsatz(self.graph, self.p)

    @property
    def parameter_count(self) -> int:
        return (self.graph.topology.num_edges + 1) * self.p


@dataclass(frozen=True, eq=False)
class FeatureMap:
    grid: np.ndarray
    exact: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 3:
            raise ShapeError(f"feature grid must be rows x cols x filters, got shape {grid.shape}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.grid.shape

    @property
    def num_filters(self) -> int:
        return self.grid.shape[2]


def make_filter_bank(
    topology: DeviceTopology,
    count: int,
    p: int = 1,
    shots: int = DEFAULT_SHOTS,
    base_seed: int = 0,
    decoder: Union[Decoder, str] = Decoder.ONES,
) -> List[QuanvFilter]:
    """Filters sharing a topology and layer count, each with its own weight seed"""
    if count < 1:
        raise ArgumentError(f"filter count must be >= 1, got {count}")
    return [
        QuanvFilter(
            id=i,
            graph=random_weighted_graph(topology, base_seed + i),
            p=p,
            shots=shots,
            seed=base_seed + i,
            decoder=Decoder(decoder),
        )
        for i in range(count)
    ]


def blocks_per_side(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


def tile_image(
    image: np.ndarray, window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE
) -> List[TensorBlock]:
    """Cut an image into complete blocks, row-major

    Args:
        image (np.ndarray): (height, width, channels) or (height, width) intensities in [0, 255]
        window (int): Block side in pixels
        stride (int): Offset step in pixels

    Returns:
        List[TensorBlock]: Blocks normalized to [0, 1], flattened over (height, width, channel)
    """
    pixels = np.asarray(image)
    if pixels.ndim == 2:
        pixels = pixels[:, :, np.newaxis]
    if pixels.ndim != 3:
        raise ShapeError(f"image must be (height, width, channels), got shape {pixels.shape}")
    if window < 1 or stride < 1:
        raise ArgumentError(f"window and stride must be >= 1, got {window}, {stride}")
    height, width, _ = pixels.shape
    if window > height or window > width:
        raise ShapeError(f"window {window} exceeds image size {height}x{width}")

    scaled = pixels.astype(np.float64) / PIXEL_MAX
    blocks = []
    for r in range(blocks_per_side(height, window, stride)):
        for c in range(blocks_per_side(width, window, stride)):
            top, left = r * stride, c * stride
            patch = scaled[top:top + window, left:left + window, :]
            blocks.append(TensorBlock(r, c, patch.reshape(-1)))
    return blocks


def encode_block(
    block: Union[TensorBlock, np.ndarray],
    group_size: int = DEFAULT_GROUP_SIZE,
    ansatz: Optional[QaoaAnsatz] = None,
) -> np.ndarray:
    """Average consecutive groups of block values and scale them to angles in [0, pi]"""
    values = block.values if isinstance(block, TensorBlock) else np.asarray(block, dtype=np.float64)
    if group_size < 1:
        raise ArgumentError(f"group size must be >= 1, got {group_size}")
    if values.shape[0] % group_size:
        raise ShapeError(f"block length {values.shape[0]} is not divisible by group size {group_size}")
    count = values.shape[0] // group_size
    if ansatz is not None and count != ansatz.parameter_count:
        raise ShapeError(
            f"block of {values.shape[0]} values in groups of {group_size} gives {count} angles, "
            f"ansatz takes {ansatz.parameter_count}"
        )
    # sorted so the mean does not depend on order within a group
    groups = np.sort(values.reshape(count, group_size), axis=1)
    return groups.mean(axis=1) * np.pi


def block_seed(filter_seed: int, block_key: int) -> np.random.SeedSequence:
    """Shot seed of one (filter, block) evaluation"""
    return np.random.SeedSequence([int(filter_seed), int(block_key)])


def decode(
    probabilities: np.ndarray, topology: DeviceTopology, decoder: Union[Decoder, str]
) -> float:
    """Collapse a basis-state distribution to one scalar in [0, 1]

    ``ones`` is the mean over qubits of P(1). ``agreement`` is the mean over
    edges of the probability that both endpoints read the same bit.
    """
    decoder = Decoder(decoder)
    n = topology.num_qubits
    if decoder is Decoder.ONES:
        value = float(marginal_ones(probabilities, n).mean())
    else:
        if not topology.edges:
            raise ArgumentError("agreement decoding needs at least one edge")
        value = float(np.mean([pair_agreement(probabilities, n, a, b) for a, b in topology.edges]))
    return min(max(value, 0.0), 1.0)


def apply_filter(
    qfilter: QuanvFilter,
    angles: Sequence[float],
    mode: Union[FilterMode, str] = FilterMode.EXACT,
    block_key: int = 0,
) -> float:
    """Run one filter on encoded angles and decode a scalar

    Args:
        qfilter (QuanvFilter): Filter to run
        angles (Sequence[float]): ``parameter_count`` angles, edge order then driver per layer
        mode (FilterMode): ``exact`` probabilities or seeded ``shots`` frequencies
        block_key (int): Block identity mixed into the shot seed

    Returns:
        float: Decoded value in [0, 1]
    """
    ansatz = qfilter.ansatz
    circuit = build_qaoa_circuit(ansatz, angles)
    state = apply_circuit(zero_state(ansatz.num_qubits), circuit)
    if FilterMode(mode) is FilterMode.EXACT:
        probabilities = exact_probabilities(state)
    else:
        histogram = sample_shots(state, qfilter.shots, block_seed(qfilter.seed, block_key))
        probabilities = histogram_frequencies(histogram)
    return decode(probabilities, ansatz.graph.topology, qfilter.decoder)


def check_filter_bank(filters: Sequence[QuanvFilter]) -> None:
    if not filters:
        raise ArgumentError("at least one quanvolutional filter is required")
    first = filters[0]
    for qfilter in filters[1:]:
        if qfilter.graph.topology != first.graph.topology or qfilter.p != first.p:
            raise ShapeError("filters in a bank must share topology and layer count")


def evaluate_block(
    filters: Sequence[QuanvFilter],
    block: Union[TensorBlock, np.ndarray],
    group_size: int = DEFAULT_GROUP_SIZE,
    mode: Union[FilterMode, str] = FilterMode.EXACT,
    block_key: int = 0,
) -> np.ndarray:
    """One decoded scalar per filter for a single block"""
    angles = encode_block(block, group_size, filters[0].ansatz)
    return np.array([apply_filter(f, angles, mode, block_key) for f in filters])


BlockEvaluator = Callable[[TensorBlock, int], np.ndarray]


def quanv_forward(
    image: np.ndarray,
    filters: Sequence[QuanvFilter],
    cache=None,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    group_size: int = DEFAULT_GROUP_SIZE,
    mode: Union[FilterMode, str] = FilterMode.EXACT,
    image_index: int = 0,
    workers: int = 1,
) -> FeatureMap:
    """Feature map of one image through a filter bank

    Args:
        image (np.ndarray): (height, width, channels) intensities
        filters (Sequence[QuanvFilter]): Bank sharing topology and p
        cache (DynamicMapper, optional): Budgeted evaluator answering blocks
            beyond its budget by nearest processed block
        window (int): Block side
        stride (int): Block step
        group_size (int): Values averaged per angle
        mode (FilterMode): Exact or shot-sampled evaluation
        image_index (int): Image position, combined with the block position into the shot seed
        workers (int): Threads used when no cache is given

    Returns:
        FeatureMap: grid[r][c][i] = filter i's value for block (r, c)
    """
    check_filter_bank(filters)
    blocks = tile_image(image, window, stride)
    height, width = np.asarray(image).shape[:2]
    rows, cols = blocks_per_side(height, window, stride), blocks_per_side(width, window, stride)
    keys = [image_index * len(blocks) + i for i in range(len(blocks))]

    def evaluate(block: TensorBlock, key: int) -> np.ndarray:
        return evaluate_block(filters, block, group_size, mode, key)

    exact = None
    if cache is None:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                payloads = list(pool.map(evaluate, blocks, keys))
        else:
            payloads = [evaluate(block, key) for block, key in zip(blocks, keys)]
    else:
        payloads, flags = cache.resolve(blocks, evaluate, keys)
        exact = np.asarray(flags, dtype=bool).reshape(rows, cols)
    grid = np.asarray(payloads, dtype=np.float64).reshape(rows, cols, len(filters))
    return FeatureMap(grid, exact)

#!/usr/bin/env python3
"""Balltree dynamic mapping of unprocessed blocks onto processed ones.

Within a compute budget as many distinct blocks as possible are evaluated
through the filter bank; every other block reuses the output of its
Euclidean-nearest evaluated block.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from quanvnet.errors import ArgumentError, EmptyInputError, ShapeError
from quanvnet.quanv import (
    DEFAULT_GROUP_SIZE,
    BlockEvaluator,
    FilterMode,
    QuanvFilter,
    TensorBlock,
    check_filter_bank,
    evaluate_block,
)

logger = logging.getLogger(__name__)

DEFAULT_LEAF_SIZE = 16
PROGRESS_STEPS = 10

# relative slack on the pruning bound so rounding never drops the true nearest
_PRUNE_SLACK = 1e-9


def euclidean_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Distance from every row of points to query"""
    diff = points - query
    return np.sqrt(np.sum(diff * diff, axis=1))


@dataclass(frozen=True)
class ComputeBudget:
    max_exact_evaluations: int

    def __post_init__(self):
        if self.max_exact_evaluations < 1:
            raise ArgumentError(
                f"compute budget must allow at least one evaluation, got {self.max_exact_evaluations}"
            )


@dataclass(frozen=True, eq=False)
class Neighbor:
    index: int
    distance: float
    payload: np.ndarray


@dataclass(frozen=True, eq=False)
class _Node:
    center: np.ndarray
    radius: float
    indices: Optional[np.ndarray] = None
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.indices is not None


class BallTree:
    def __init__(self, points: np.ndarray, payloads: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE):
        """Index points for exact nearest-neighbor queries

        Args:
            points (np.ndarray): (count, dimension) vectors
            payloads (np.ndarray): One record per point, (count, width)
            leaf_size (int): Maximum points per leaf
        """
        if leaf_size < 1:
            raise ArgumentError(f"leaf size must be >= 1, got {leaf_size}")
        try:
            pts = np.array(points, dtype=np.float64)
        except ValueError as e:
            raise ShapeError(f"points must share one dimension: {e}") from e
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 0)
        if pts.shape[0] == 0:
            raise EmptyInputError("balltree needs at least one point")
        if pts.ndim != 2:
            raise ShapeError(f"points must be (count, dimension), got shape {pts.shape}")
        records = np.array(payloads, dtype=np.float64)
        if records.ndim == 1:
            records = records.reshape(-1, 1)
        if records.shape[0] != pts.shape[0]:
            raise ShapeError(f"{pts.shape[0]} points but {records.shape[0]} payloads")
        pts.setflags(write=False)
        records.setflags(write=False)
        self._points = pts
        self._payloads = records
        self.leaf_size = leaf_size
        self._root = self._build(np.arange(pts.shape[0]))

    def _build(self, indices: np.ndarray) -> _Node:
        pts = self._points[indices]
        center = pts.mean(axis=0)
        radius = float(euclidean_distances(pts, center).max())
        if indices.shape[0] <= self.leaf_size:
            return _Node(center, radius, indices=indices)
        spread = pts.max(axis=0) - pts.min(axis=0)
        dim = int(np.argmax(spread))
        order = indices[np.argsort(pts[:, dim], kind="stable")]
        mid = order.shape[0] // 2
        return _Node(center, radius, left=self._build(order[:mid]), right=self._build(order[mid:]))

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def dimension(self) -> int:
        return self._points.shape[1]

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def payloads(self) -> np.ndarray:
        return self._payloads

    def nearest(self, query: np.ndarray) -> Neighbor:
        """Closest stored point, lowest index on ties"""
        return self.nearest_with_stats(query)[0]

    def nearest_with_stats(self, query: np.ndarray) -> Tuple[Neighbor, int]:
        """Closest stored point and the number of nodes visited to find it"""
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise ShapeError(f"query must have dimension {self.dimension}, got shape {q.shape}")

        best_index, best_dist = -1, np.inf
        visited = 0
        stack = [self._root]
        while stack:
            node = stack.pop()
            visited += 1
            bound = float(np.sqrt(np.sum((q - node.center) ** 2))) - node.radius
            if bound > best_dist + _PRUNE_SLACK * (1.0 + best_dist):
                continue
            if node.is_leaf:
                dists = euclidean_distances(self._points[node.indices], q)
                closest = dists.min()
                index = int(node.indices[dists == closest].min())
                if closest < best_dist or (closest == best_dist and index < best_index):
                    best_index, best_dist = index, float(closest)
                continue
            to_left = np.sum((q - node.left.center) ** 2)
            to_right = np.sum((q - node.right.center) ** 2)
            if to_left <= to_right:
                stack += [node.right, node.left]
            else:
                stack += [node.left, node.right]
        return Neighbor(best_index, best_dist, self._payloads[best_index]), visited

    def audit(self) -> bool:
        """Check ball containment, leaf sizes and point coverage"""
        seen: List[int] = []

        def walk(node: _Node) -> Tuple[bool, np.ndarray]:
            if node.is_leaf:
                members = node.indices
                seen.extend(int(i) for i in members)
                ok = members.shape[0] <= self.leaf_size
            else:
                left_ok, left_members = walk(node.left)
                right_ok, right_members = walk(node.right)
                members = np.concatenate([left_members, right_members])
                ok = left_ok and right_ok
            inside = euclidean_distances(self._points[members], node.center) <= node.radius
            return ok and bool(inside.all()), members

        ok, _ = walk(self._root)
        return ok and sorted(seen) == list(range(len(self)))


def build(points: np.ndarray, payloads: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> BallTree:
    return BallTree(points, payloads, leaf_size)


@dataclass(frozen=True, eq=False)
class BudgetResult:
    records: np.ndarray
    exact: np.ndarray
    tree: BallTree
    evaluations: int
    distinct_blocks: int

    @property
    def exact_count(self) -> int:
        return int(self.exact.sum())

    @property
    def mapped_count(self) -> int:
        return int((~self.exact).sum())


def _block_matrix(blocks: Sequence[Union[TensorBlock, np.ndarray]]) -> np.ndarray:
    rows = [b.values if isinstance(b, TensorBlock) else np.asarray(b, dtype=np.float64) for b in blocks]
    lengths = {r.shape for r in rows}
    if len(lengths) > 1:
        raise ShapeError(f"blocks have differing shapes {sorted(lengths)}")
    return np.stack(rows)


def process_with_budget(
    blocks: Sequence[Union[TensorBlock, np.ndarray]],
    filters: Sequence[QuanvFilter],
    budget: ComputeBudget,
    group_size: int = DEFAULT_GROUP_SIZE,
    mode: Union[FilterMode, str] = FilterMode.EXACT,
    block_keys: Optional[Sequence[int]] = None,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    workers: int = 1,
    cache: Optional["DynamicMapper"] = None,
) -> BudgetResult:
    """Spend the budget on distinct blocks, map the rest through a balltree

    Args:
        blocks (Sequence[TensorBlock]): Blocks in processing order
        filters (Sequence[QuanvFilter]): Filter bank
        budget (ComputeBudget): Maximum circuit evaluations per filter bank, cached blocks included
        group_size (int): Values averaged per angle
        mode (FilterMode): Exact or shot-sampled evaluation
        block_keys (Sequence[int], optional): Shot-seed keys, defaults to block positions
        leaf_size (int): Balltree leaf size
        workers (int): Threads running the exact evaluations
        cache (DynamicMapper, optional): Blocks processed by an earlier run; they are reused
            without evaluation and count against the budget

    Returns:
        BudgetResult: One record per block, exactness flags and the tree of processed blocks
    """
    check_filter_bank(filters)
    if not blocks:
        raise EmptyInputError("no blocks to process")
    matrix = _block_matrix(blocks)
    keys = list(block_keys) if block_keys is not None else list(range(len(blocks)))
    if len(keys) != len(blocks):
        raise ShapeError(f"{len(blocks)} blocks but {len(keys)} block keys")
    cached_points, cached_payloads = (
        cache.processed() if cache is not None else (np.empty((0, matrix.shape[1])), np.empty((0, len(filters))))
    )
    if cached_points.shape[1:] != matrix.shape[1:] or cached_payloads.shape[1] != len(filters):
        raise ShapeError(
            f"cached blocks {cached_points.shape[1:]} x {cached_payloads.shape[1]} filters do not match "
            f"blocks {matrix.shape[1:]} x {len(filters)} filters"
        )

    first_seen: Dict[bytes, int] = {}
    owner = np.empty(len(blocks), dtype=np.int64)
    distinct: List[int] = []
    for i, row in enumerate(matrix):
        key = row.tobytes()
        if key not in first_seen:
            first_seen[key] = len(distinct)
            distinct.append(i)
        owner[i] = first_seen[key]

    known: Dict[int, np.ndarray] = {}
    if cache is not None:
        for d, i in enumerate(distinct):
            payload = cache.lookup(matrix[i])
            if payload is not None:
                known[d] = payload
    fresh = [i for d, i in enumerate(distinct) if d not in known]
    allowance = max(budget.max_exact_evaluations - len(cached_points), 0)
    chosen = fresh[:allowance]

    def evaluate(i: int) -> np.ndarray:
        return evaluate_block(filters, matrix[i], group_size, mode, keys[i])

    def collect(results: Iterable[np.ndarray]) -> List[np.ndarray]:
        collected = []
        report_every = max(len(chosen) // PROGRESS_STEPS, 1)
        for done, payload in enumerate(results, 1):
            collected.append(payload)
            if done % report_every == 0 or done == len(chosen):
                logger.info(f"Evaluated {done}/{len(chosen)} blocks ({100 * done // len(chosen)}%)")
        return collected

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            payloads = collect(pool.map(evaluate, chosen))
    else:
        payloads = collect(map(evaluate, chosen))
    payloads = np.asarray(payloads, dtype=np.float64).reshape(len(chosen), len(filters))
    for i, payload in zip(chosen, payloads):
        known[int(owner[i])] = payload
    tree = build(
        np.concatenate([cached_points, matrix[chosen]]),
        np.concatenate([cached_payloads, payloads]),
        leaf_size,
    )

    records = np.empty((len(blocks), len(filters)))
    exact = np.array([int(owner[i]) in known for i in range(len(blocks))], dtype=bool)
    visits = []
    for i in range(len(blocks)):
        if exact[i]:
            records[i] = known[int(owner[i])]
        else:
            neighbor, visited = tree.nearest_with_stats(matrix[i])
            records[i] = neighbor.payload
            visits.append(visited)
    if visits:
        logger.debug(
            f"balltree over {len(tree)} points: mean {np.mean(visits):.1f} nodes visited per query"
        )
    logger.info(
        f"budget {budget.max_exact_evaluations}: {len(cached_points)} cached, {len(chosen)} evaluations, "
        f"{int(exact.sum())} exact blocks, {int((~exact).sum())} mapped"
    )
    return BudgetResult(records, exact, tree, len(chosen), len(distinct))


class DynamicMapper:
    def __init__(self, budget: ComputeBudget, leaf_size: int = DEFAULT_LEAF_SIZE):
        """Budgeted block evaluator shared across quanv_forward calls

        Exact duplicates of processed blocks reuse their record without
        spending budget. Once the budget is spent, blocks are answered by the
        nearest processed block. A mapper has one owner; it is not locked.

        Args:
            budget (ComputeBudget): Total evaluations this mapper may spend
            leaf_size (int): Balltree leaf size
        """
        self.budget = budget
        self.leaf_size = leaf_size
        self._points: List[np.ndarray] = []
        self._payloads: List[np.ndarray] = []
        self._index: Dict[bytes, int] = {}
        self._tree: Optional[BallTree] = None
        self.mapped_count = 0

    @classmethod
    def from_records(
        cls,
        points: np.ndarray,
        payloads: np.ndarray,
        budget: Optional[ComputeBudget] = None,
        leaf_size: int = DEFAULT_LEAF_SIZE,
    ) -> "DynamicMapper":
        """Rebuild a mapper from persisted (block, record) pairs, budget already spent"""
        points = np.asarray(points, dtype=np.float64)
        payloads = np.asarray(payloads, dtype=np.float64)
        if points.shape[0] == 0:
            raise EmptyInputError("no processed blocks to rebuild from")
        mapper = cls(budget or ComputeBudget(points.shape[0]), leaf_size)
        for point, payload in zip(points, payloads):
            mapper._add(point, payload)
        return mapper

    @property
    def exact_count(self) -> int:
        return len(self._points)

    @property
    def remaining(self) -> int:
        return max(self.budget.max_exact_evaluations - len(self._points), 0)

    def _add(self, point: np.ndarray, payload: np.ndarray) -> None:
        key = point.tobytes()
        if key in self._index:
            return
        self._index[key] = len(self._points)
        self._points.append(np.array(point, dtype=np.float64))
        self._payloads.append(np.array(payload, dtype=np.float64).reshape(-1))
        self._tree = None

    def lookup(self, values: np.ndarray) -> Optional[np.ndarray]:
        """Record of a processed block with exactly these values"""
        known = self._index.get(np.asarray(values, dtype=np.float64).tobytes())
        return None if known is None else self._payloads[known]

    def processed(self) -> Tuple[np.ndarray, np.ndarray]:
        """(blocks, values) and (blocks, width) arrays in processing order"""
        if not self._points:
            raise EmptyInputError("no block has been processed yet")
        return np.stack(self._points), np.stack(self._payloads)

    def tree(self) -> BallTree:
        if not self._points:
            raise EmptyInputError("no block has been processed yet")
        if self._tree is None:
            self._tree = build(np.stack(self._points), np.stack(self._payloads), self.leaf_size)
        return self._tree

    def resolve(
        self, blocks: Sequence[TensorBlock], evaluate: BlockEvaluator, keys: Sequence[int]
    ) -> Tuple[np.ndarray, List[bool]]:
        """Records for blocks, evaluating while budget remains

        Returns:
            Tuple[np.ndarray, List[bool]]: (blocks, width) records and per-block exactness
        """
        records, flags = [], []
        for block, key in zip(blocks, keys):
            values = block.values if isinstance(block, TensorBlock) else np.asarray(block, dtype=np.float64)
            known = self._index.get(values.tobytes())
            if known is not None:
                records.append(self._payloads[known])
                flags.append(True)
            elif self.remaining > 0:
                payload = evaluate(block, key)
                self._add(values, payload)
                records.append(self._payloads[-1])
                flags.append(True)
            else:
                records.append(self.tree().nearest(values).payload)
                flags.append(False)
                self.mapped_count += 1
        return np.stack(records), flags

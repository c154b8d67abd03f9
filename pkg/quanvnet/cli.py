#!/usr/bin/env python3
"""Command-line harness.

Commands:
    validate-appendix    two-qubit same-state probability against its closed form
    precompute-features  quanvolutional feature maps for the split images
    train                CNN or QNN replicas, per-replica and averaged metrics
    dataset gen|split    synthetic dataset CSV, train/test CSVs
    config list|view|set experiment config files
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from quanvnet import config as config_files
from quanvnet.config import DEFAULT_TEMPLATE, ExperimentConfig
from quanvnet.data import CLASS_NAMES, Dataset, generate_synthetic, load_csv, save_csv, split, split_indices
from quanvnet.errors import ArgumentError, ConfigError, QuanvError, ShapeError
from quanvnet.featcache import ComputeBudget, process_with_budget
from quanvnet.nn import ChannelScaler, MetricRow, Network, build_reference_cnn, build_reference_qnn, train
from quanvnet.qaoa import DeviceTopology, QaoaAnsatz, WeightedGraph, build_qaoa_circuit
from quanvnet.quanv import FeatureMap, PIXEL_MAX, blocks_per_side, tile_image
from quanvnet.statevector import apply_circuit, same_state_probability, zero_state
from quanvnet.store import (
    CacheStats,
    load_feature_cache,
    read_features,
    save_checkpoint,
    write_appendix,
    write_cache_stats,
    write_features,
    write_metrics,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ERROR = 2

APPENDIX_TOLERANCE = 1e-9
APPENDIX_BETAS = (np.pi / 8, np.pi / 4, 3 * np.pi / 8)

FEATURES_FILE = "features.csv"
CACHE_STATS_FILE = "cache_stats.csv"
METRICS_FILE = "metrics.csv"
APPENDIX_FILE = "appendix.csv"


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )


def analytic_same_state(theta: float, beta: float) -> float:
    return 0.5 * (1.0 + np.sin(theta) * np.sin(2.0 * beta))


def simulated_same_state(theta: float, beta: float) -> float:
    """Same-state probability of a one-edge, unit-weight QAOA layer"""
    graph = WeightedGraph(DeviceTopology(2, ((0, 1),), "pair"), np.ones(1))
    circuit = build_qaoa_circuit(QaoaAnsatz(graph, 1), [theta, beta])
    return same_state_probability(apply_circuit(zero_state(2), circuit))


def appendix_rows(thetas: Sequence[float], betas: Sequence[float] = APPENDIX_BETAS) -> List[Tuple[float, ...]]:
    rows = []
    for beta in betas:
        for theta in thetas:
            analytic = analytic_same_state(theta, beta)
            simulated = simulated_same_state(theta, beta)
            rows.append((float(theta), float(beta), analytic, simulated, abs(simulated - analytic)))
    return rows


def cmd_validate_appendix(resolution: int, out_dir: str) -> int:
    if resolution < 2:
        raise ArgumentError(f"resolution must be >= 2, got {resolution}")
    rows = appendix_rows(np.linspace(0.0, 2.0 * np.pi, resolution))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, APPENDIX_FILE)
    write_appendix(path, rows)
    failures = [row for row in rows if not row[4] < APPENDIX_TOLERANCE]
    worst = max(row[4] for row in rows)
    if failures:
        logger.error(f"{len(failures)} of {len(rows)} rows exceed {APPENDIX_TOLERANCE:g} (worst {worst:.3e})")
        return EXIT_VALIDATION
    logger.info(f"All {len(rows)} rows within {APPENDIX_TOLERANCE:g} (worst {worst:.3e}); wrote {path}")
    return EXIT_OK


def load_experiment_data(cfg: ExperimentConfig) -> Tuple[Dataset, np.ndarray, np.ndarray]:
    """Dataset and the train/test row indices selected by the config"""
    if cfg.dataset:
        dataset = load_csv(cfg.dataset)
    else:
        dataset = generate_synthetic(cfg.synthetic_per_class, cfg.split_seed)
    logger.debug(f"Experiment config: {cfg.as_dict()}")
    counts = dict(zip(CLASS_NAMES, dataset.class_counts().tolist()))
    logger.info(f"Loaded {len(dataset)} images: {counts}")
    train_idx, test_idx = split_indices(len(dataset), cfg.n_train, cfg.n_test, cfg.split_seed)
    return dataset, train_idx, test_idx


def cmd_precompute_features(cfg: ExperimentConfig, out_dir: str, resume: bool = False) -> CacheStats:
    """Feature maps of every split image under the config's compute budget

    With ``resume``, blocks evaluated exactly by an earlier run into the same
    output directory are reloaded and count against the budget, so a larger
    budget extends the earlier cache. The earlier run must share the filter
    bank settings.
    """
    dataset, train_idx, test_idx = load_experiment_data(cfg)
    features_path = os.path.join(out_dir, FEATURES_FILE)
    cache = None
    if resume and os.path.exists(features_path):
        cache = load_feature_cache(features_path, dataset, cfg.window, cfg.stride, cfg.leaf_size)
    selected = np.sort(np.concatenate([train_idx, test_idx]))
    filters = cfg.filter_bank()
    height, width = dataset.images.shape[1:3]
    rows = blocks_per_side(height, cfg.window, cfg.stride)
    cols = blocks_per_side(width, cfg.window, cfg.stride)
    per_image = rows * cols

    blocks, keys = [], []
    for image_index in selected:
        tiles = tile_image(dataset.images[image_index], cfg.window, cfg.stride)
        blocks.extend(tiles)
        keys.extend(int(image_index) * per_image + i for i in range(per_image))
    budget = cfg.budget if cfg.budget is not None else len(blocks)
    logger.info(
        f"Precomputing {len(filters)} filters over {len(selected)} images ({len(blocks)} blocks), "
        f"mode {cfg.mode}, budget {budget}"
    )
    result = process_with_budget(
        blocks, filters, ComputeBudget(budget), cfg.group_size, cfg.mode, keys, cfg.leaf_size, cfg.workers, cache
    )

    records = result.records.reshape(len(selected), rows, cols, len(filters))
    exact = result.exact.reshape(len(selected), rows, cols)
    maps = [FeatureMap(records[i], exact[i]) for i in range(len(selected))]
    os.makedirs(out_dir, exist_ok=True)
    count = write_features(features_path, selected.tolist(), maps)
    stats = CacheStats(budget, len(blocks), result.distinct_blocks, result.exact_count, result.mapped_count)
    write_cache_stats(os.path.join(out_dir, CACHE_STATS_FILE), stats)
    logger.info(f"Wrote {count} feature rows; {stats.exact_count} exact blocks, {stats.mapped_count} mapped")
    return stats


def load_feature_inputs(path: str, indices: np.ndarray) -> np.ndarray:
    """Feature grids for the given dataset rows, in the given order"""
    if not os.path.exists(path):
        raise ConfigError(f"no features at {path}; run `precompute-features` with the same config and --out first")
    images, grids, _ = read_features(path)
    position: Dict[int, int] = {int(image): i for i, image in enumerate(images)}
    missing = [int(i) for i in indices if int(i) not in position]
    if missing:
        raise ConfigError(
            f"{path} lacks features for {len(missing)} split images; rerun `precompute-features`"
        )
    return grids[[position[int(i)] for i in indices]]


def build_network(kind: str, seed: int, input_shape: Tuple[int, ...]) -> Network:
    if kind == "cnn":
        return build_reference_cnn(seed, input_shape)
    return build_reference_qnn(seed, input_shape)


def average_streams(streams: Sequence[Sequence[MetricRow]]) -> List[MetricRow]:
    """Row-wise arithmetic mean of replica metric streams"""
    iterations = [tuple(row.iteration for row in stream) for stream in streams]
    if len(set(iterations)) != 1:
        raise ShapeError("replica metric streams report different iterations")
    return [
        MetricRow(
            rows[0].iteration,
            float(np.mean([row.train_loss for row in rows])),
            float(np.mean([row.test_accuracy for row in rows])),
        )
        for rows in zip(*streams)
    ]


def cmd_train(cfg: ExperimentConfig, out_dir: str) -> List[MetricRow]:
    """Train every replica and write metrics and checkpoints

    Returns:
        List[MetricRow]: The averaged metric stream
    """
    dataset, train_idx, test_idx = load_experiment_data(cfg)
    if cfg.model_kind == "qnn":
        features = os.path.join(out_dir, FEATURES_FILE)
        x_train = load_feature_inputs(features, train_idx)
        x_test = load_feature_inputs(features, test_idx)
    else:
        x_train = dataset.images[train_idx] / PIXEL_MAX
        x_test = dataset.images[test_idx] / PIXEL_MAX
    scaler = ChannelScaler.fit(x_train)
    x_train, x_test = scaler.transform(x_train), scaler.transform(x_test)
    y_train, y_test = dataset.labels[train_idx], dataset.labels[test_idx]
    os.makedirs(out_dir, exist_ok=True)

    def run_replica(replica: int) -> List[MetricRow]:
        net = build_network(cfg.model_kind, cfg.seed + replica, x_train.shape[1:])
        rows = train(net, (x_train, y_train), (x_test, y_test), cfg.train_config(replica))
        save_checkpoint(net, os.path.join(out_dir, f"{cfg.model_kind}_{replica}.ckpt"))
        logger.info(f"Replica {replica}: final accuracy {rows[-1].test_accuracy:.3f} after {rows[-1].iteration} steps")
        return rows

    with ThreadPoolExecutor(max_workers=min(cfg.workers, cfg.replicas)) as pool:
        streams = list(pool.map(run_replica, range(cfg.replicas)))
    mean = average_streams(streams)
    tagged = [(str(i), cfg.model_kind, rows) for i, rows in enumerate(streams)]
    tagged.append(("mean", cfg.model_kind, mean))
    write_metrics(os.path.join(out_dir, METRICS_FILE), tagged)
    logger.info(
        f"{cfg.model_kind} x{cfg.replicas}: final mean test accuracy {mean[-1].test_accuracy:.3f} "
        f"at iteration {mean[-1].iteration}"
    )
    return mean


def cmd_dataset_gen(count_per_class: int, seed: int, out_path: str) -> Dataset:
    dataset = generate_synthetic(count_per_class, seed)
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    save_csv(dataset, out_path)
    logger.info(f"Wrote {len(dataset)} synthetic images to {out_path}")
    return dataset


def cmd_dataset_split(path: str, n_train: int, n_test: int, seed: int, out_dir: str) -> Tuple[Dataset, Dataset]:
    train_set, test_set = split(load_csv(path), n_train, n_test, seed)
    os.makedirs(out_dir, exist_ok=True)
    save_csv(train_set, os.path.join(out_dir, "train.csv"))
    save_csv(test_set, os.path.join(out_dir, "test.csv"))
    logger.info(f"Split {path}: {len(train_set)} train, {len(test_set)} test")
    return train_set, test_set


def cmd_config(action: str, env_file: str, template_file: str, var: Optional[str], value: Optional[str]) -> int:
    env_vars = config_files.load_env(env_file)
    template_vars = config_files.get_template_vars(template_file)

    if action == "view":
        print(f"\nExperiment config {env_file}:")
        print("-" * 50)
        for key, current in sorted(env_vars.items()):
            desc = template_vars.get(key, "")
            if desc:
                print(f"\n# {desc}")
            print(f"{key}={current}")
    elif action == "list":
        print("\nAvailable config keys:")
        print("-" * 50)
        for key, desc in sorted(template_vars.items()):
            print(f"\n{key}:")
            if desc:
                print(f"Description: {desc}")
            print(f"Current value: {env_vars.get(key, 'Not set')}")
    else:
        if not var or value is None:
            raise ArgumentError("config set needs --var and --value")
        if var not in template_vars:
            raise ConfigError(f"{var} is not defined in {template_file}")
        config_files.set_value(env_file, var, value)
        print(f"\nUpdated {var} in {env_file}")
    return EXIT_OK


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "mode": args.mode,
        "shots": args.shots,
        "budget": args.budget,
        "replicas": args.replicas,
    }
    return ExperimentConfig.from_file(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Quanvolutional network experiments")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    appendix = commands.add_parser("validate-appendix", help="Check the two-qubit closed form")
    appendix.add_argument("--resolution", type=int, default=64, help="Theta grid points over [0, 2pi]")
    appendix.add_argument("--out", default="results", help="Output directory")

    for name, text in (("precompute-features", "Compute quanvolutional feature maps"),
                       ("train", "Train model replicas")):
        command = commands.add_parser(name, help=text)
        command.add_argument("--config", help="Experiment config file")
        command.add_argument("--out", default="results", help="Output directory")
        command.add_argument("--seed", type=int, help="Override seed")
        command.add_argument("--mode", choices=["exact", "shots"], help="Override filter mode")
        command.add_argument("--shots", type=int, help="Override shots per circuit")
        command.add_argument("--budget", type=int, help="Override exact-evaluation budget")
        command.add_argument("--replicas", type=int, help="Override replica count")
        if name == "precompute-features":
            command.add_argument(
                "--resume", action="store_true", help="Reuse exact blocks from features.csv in --out"
            )

    dataset = commands.add_parser("dataset", help="Dataset files")
    dataset_actions = dataset.add_subparsers(dest="action", required=True)
    gen = dataset_actions.add_parser("gen", help="Write a synthetic dataset CSV")
    gen.add_argument("--count", type=int, default=125, help="Images per class")
    gen.add_argument("--seed", type=int, default=0, help="Generator seed")
    gen.add_argument("--out", default="synthetic.csv", help="Output CSV (.gz compresses)")
    splitter = dataset_actions.add_parser("split", help="Write train.csv and test.csv")
    splitter.add_argument("--dataset", required=True, help="Dataset CSV")
    splitter.add_argument("--n-train", type=int, required=True, help="Training records")
    splitter.add_argument("--n-test", type=int, required=True, help="Test records")
    splitter.add_argument("--seed", type=int, default=0, help="Shuffle seed")
    splitter.add_argument("--out", default="data", help="Output directory")

    cfg = commands.add_parser("config", help="Inspect or edit an experiment config")
    cfg.add_argument("action", choices=["view", "set", "list"], help="Action to perform")
    cfg.add_argument("--file", default="experiment.env", help="Config file")
    cfg.add_argument("--template-file", default=DEFAULT_TEMPLATE, help="Documented key template")
    cfg.add_argument("--var", help="Key for set")
    cfg.add_argument("--value", help="Value for set")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        if args.command == "validate-appendix":
            return cmd_validate_appendix(args.resolution, args.out)
        if args.command == "precompute-features":
            cmd_precompute_features(_experiment_config(args), args.out, args.resume)
        elif args.command == "train":
            cmd_train(_experiment_config(args), args.out)
        elif args.command == "dataset" and args.action == "gen":
            cmd_dataset_gen(args.count, args.seed, args.out)
        elif args.command == "dataset":
            cmd_dataset_split(args.dataset, args.n_train, args.n_test, args.seed, args.out)
        else:
            return cmd_config(args.action, args.file, args.template_file, args.var, args.value)
    except (QuanvError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Numpy convolutional networks, softmax cross-entropy and mini-batch SGD.

Tensors are laid out (batch, height, width, channels). Convolutions and
pooling are valid (no padding): output side = floor((in - k) / stride) + 1.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from quanvnet.errors import ArgumentError, DivergenceError, ShapeError

logger = logging.getLogger(__name__)

NUM_CLASSES = 4

Shape = Tuple[int, ...]
LabeledArrays = Tuple[np.ndarray, np.ndarray]


def valid_output_side(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


class Layer:
    """Base layer: caches what backward needs during forward"""

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def output_shape(self, input_shape: Shape) -> Shape:
        return input_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (batch, out_h, out_w, channels, kernel, kernel)
    return sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]


def _spatial_check(name: str, input_shape: Shape, kernel: int) -> None:
    if len(input_shape) != 3:
        raise ShapeError(f"{name} expects (height, width, channels), got {input_shape}")
    if kernel > input_shape[0] or kernel > input_shape[1]:
        raise ShapeError(f"{name}: kernel {kernel} larger than input {input_shape[:2]}")


class Conv2D(Layer):
    def __init__(
        self,
        name: str,
        in_channels: int,
        num_filters: int,
        kernel: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ):
        """Valid cross-correlation with bias

        Args:
            name (str): Parameter-name prefix
            in_channels (int): Input channels
            num_filters (int): Output channels
            kernel (int): Square kernel side
            stride (int): Step in pixels
            rng (np.random.Generator, optional): Initializer; weights start at zero without one
        """
        super().__init__(name)
        if stride < 1 or kernel < 1:
            raise ArgumentError(f"{name}: kernel and stride must be >= 1")
        self.in_channels, self.num_filters = in_channels, num_filters
        self.kernel, self.stride = kernel, stride
        shape = (num_filters, kernel, kernel, in_channels)
        if rng is None:
            weights = np.zeros(shape)
        else:
            limit = 1.0 / np.sqrt(kernel * kernel * in_channels)
            weights = rng.uniform(-limit, limit, size=shape)
        self.params = {"weights": weights, "biases": np.zeros(num_filters)}
        self._windows: Optional[np.ndarray] = None
        self._input_shape: Optional[Shape] = None

    def output_shape(self, input_shape: Shape) -> Shape:
        _spatial_check(self.name, input_shape, self.kernel)
        if input_shape[2] != self.in_channels:
            raise ShapeError(f"{self.name}: expects {self.in_channels} channels, got {input_shape[2]}")
        return (
            valid_output_side(input_shape[0], self.kernel, self.stride),
            valid_output_side(input_shape[1], self.kernel, self.stride),
            self.num_filters,
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.output_shape(x.shape[1:])
        self._input_shape = x.shape
        self._windows = _windows(x, self.kernel, self.stride)
        out = np.einsum("nhwckl,fklc->nhwf", self._windows, self.params["weights"], optimize=True)
        return out + self.params["biases"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        weights = self.params["weights"]
        self.grads["weights"] = np.einsum("nhwckl,nhwf->fklc", self._windows, dout, optimize=True)
        self.grads["biases"] = dout.sum(axis=(0, 1, 2))
        dx = np.zeros(self._input_shape)
        out_h, out_w = dout.shape[1:3]
        s = self.stride
        for i in range(self.kernel):
            for j in range(self.kernel):
                dx[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :] += np.einsum(
                    "nhwf,fc->nhwc", dout, weights[:, i, j, :]
                )
        return dx


class PoolKind(str, Enum):
    AVERAGE = "average"
    MAX = "max"


class Pool2D(Layer):
    def __init__(self, name: str, kind: PoolKind, window: int, stride: int):
        super().__init__(name)
        if window < 1 or stride < 1:
            raise ArgumentError(f"{name}: window and stride must be >= 1")
        self.kind, self.window, self.stride = PoolKind(kind), window, stride
        self._argmax: Optional[np.ndarray] = None
        self._input_shape: Optional[Shape] = None

    def output_shape(self, input_shape: Shape) -> Shape:
        _spatial_check(self.name, input_shape, self.window)
        return (
            valid_output_side(input_shape[0], self.window, self.stride),
            valid_output_side(input_shape[1], self.window, self.stride),
            input_shape[2],
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.output_shape(x.shape[1:])
        self._input_shape = x.shape
        windows = _windows(x, self.window, self.stride)
        if self.kind is PoolKind.AVERAGE:
            return windows.mean(axis=(-2, -1))
        flat = windows.reshape(windows.shape[:4] + (self.window * self.window,))
        # argmax keeps the first row-major maximum
        self._argmax = flat.argmax(axis=-1)
        return np.take_along_axis(flat, self._argmax[..., np.newaxis], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx = np.zeros(self._input_shape)
        out_h, out_w = dout.shape[1:3]
        s, k = self.stride, self.window
        for i in range(k):
            for j in range(k):
                if self.kind is PoolKind.AVERAGE:
                    share = dout / (k * k)
                else:
                    share = dout * (self._argmax == i * k + j)
                dx[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :] += share
        return dx


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class Flatten(Layer):
    def output_shape(self, input_shape: Shape) -> Shape:
        return (int(np.prod(input_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._input_shape)


class Dense(Layer):
    def __init__(self, name: str, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__(name)
        self.in_features, self.out_features = in_features, out_features
        if rng is None:
            weights = np.zeros((out_features, in_features))
        else:
            limit = 1.0 / np.sqrt(in_features)
            weights = rng.uniform(-limit, limit, size=(out_features, in_features))
        self.params = {"weights": weights, "biases": np.zeros(out_features)}

    def output_shape(self, input_shape: Shape) -> Shape:
        if input_shape != (self.in_features,):
            raise ShapeError(f"{self.name}: expects ({self.in_features},), got {input_shape}")
        return (self.out_features,)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        return x @ self.params["weights"].T + self.params["biases"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads["weights"] = dout.T @ self._input
        self.grads["biases"] = dout.sum(axis=0)
        return dout @ self.params["weights"]


class Network:
    def __init__(self, layers: Sequence[Layer], input_shape: Shape, kind: str = "", num_classes: int = NUM_CLASSES):
        """Layer stack whose shapes are checked end to end at construction

        Args:
            layers (Sequence[Layer]): Layers applied in order
            input_shape (Shape): Per-example input shape
            kind (str): Model label carried into metrics and checkpoints
            num_classes (int): Required size of the final output
        """
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.kind = kind
        self.num_classes = num_classes
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(layer.output_shape(self.shapes[-1]))
        if self.shapes[-1] != (num_classes,):
            raise ShapeError(f"network ends in {self.shapes[-1]}, expected ({num_classes},)")

    def parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [
            (f"{layer.name}.{key}", value)
            for layer in self.layers
            for key, value in layer.params.items()
        ]

    def gradients(self) -> Dict[str, np.ndarray]:
        return {
            f"{layer.name}.{key}": value.copy()
            for layer in self.layers
            for key, value in layer.grads.items()
        }

    def forward(self, x: np.ndarray) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network expects inputs {self.input_shape}, got {tuple(x.shape[1:])}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> None:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)


def network_forward(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Logits for a batch, or for a single example when the batch axis is absent"""
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape == net.input_shape:
        return net.forward(x[np.newaxis])[0]
    return net.forward(x)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _check_labels(labels: np.ndarray, count: int, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (count,):
        raise ShapeError(f"expected {count} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= num_classes:
        raise ArgumentError(f"labels must be integers in [0, {num_classes - 1}]")
    return y


def loss_and_gradients(net: Network, inputs: np.ndarray, labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its gradient for every parameter

    Args:
        net (Network): Model; its layer caches are overwritten
        inputs (np.ndarray): Batch of inputs
        labels (np.ndarray): Integer class labels

    Returns:
        Tuple[float, Dict[str, np.ndarray]]: Loss and gradients keyed by parameter name
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = _check_labels(labels, x.shape[0], net.num_classes)
    logits = net.forward(x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(x.shape[0])
    loss = float(-log_probs[rows, y].mean())
    dlogits = np.exp(log_probs)
    dlogits[rows, y] -= 1.0
    net.backward(dlogits / x.shape[0])
    return loss, net.gradients()


def predict(net: Network, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    return np.concatenate(
        [net.forward(x[i:i + batch_size]).argmax(axis=1) for i in range(0, x.shape[0], batch_size)]
    )


def evaluate(net: Network, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Classification accuracy"""
    if len(labels) == 0:
        raise ArgumentError("cannot evaluate on an empty set")
    return float(np.mean(predict(net, inputs) == np.asarray(labels)))


@dataclass(frozen=True, eq=False)
class ChannelScaler:
    """Per-channel zero-mean, unit-variance input scaling"""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, inputs: np.ndarray) -> "ChannelScaler":
        """Statistics over every axis but the last, from training inputs only"""
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim < 2 or x.shape[0] == 0:
            raise ArgumentError(f"cannot fit channel statistics to inputs of shape {x.shape}")
        axes = tuple(range(x.ndim - 1))
        std = x.std(axis=axes)
        # constant channels are centred only
        return cls(x.mean(axis=axes), np.where(std > 0.0, std, 1.0))

    def transform(self, inputs: np.ndarray) -> np.ndarray:
        x = np.asarray(inputs, dtype=np.float64)
        if x.shape[-1:] != self.mean.shape:
            raise ShapeError(f"expected {self.mean.shape[0]} channels, got shape {x.shape}")
        return (x - self.mean) / self.std


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 50
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ArgumentError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ArgumentError("epochs, batch size and evaluation interval must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ArgumentError(f"max steps must be >= 1, got {self.max_steps}")


@dataclass(frozen=True)
class MetricRow:
    iteration: int
    train_loss: float
    test_accuracy: float


def train(net: Network, train_set: LabeledArrays, test_set: LabeledArrays, config: TrainConfig) -> List[MetricRow]:
    """Mini-batch SGD with periodic test evaluation

    Iterations count batch steps. A metric row is emitted every
    ``eval_every`` steps and after the final step; its train loss is the mean
    batch loss since the previous row.

    Args:
        net (Network): Model, updated in place
        train_set (LabeledArrays): (inputs, labels) used for updates
        test_set (LabeledArrays): (inputs, labels) used for accuracy
        config (TrainConfig): Hyperparameters and shuffling seed

    Returns:
        List[MetricRow]: Metric stream in iteration order
    """
    x_train, y_train = (np.asarray(a) for a in train_set)
    x_test, y_test = (np.asarray(a) for a in test_set)
    if len(y_train) == 0 or len(y_test) == 0:
        raise ArgumentError("training and test sets must be nonempty")

    rng = np.random.default_rng(config.seed)
    rows: List[MetricRow] = []
    pending: List[float] = []
    step = 0
    done = False
    for epoch in range(config.epochs):
        order = rng.permutation(len(y_train))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(net, x_train[batch], y_train[batch])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"{net.kind or 'network'} loss became {loss} at step {step + 1}; lower the learning rate"
                )
            for name, param in net.parameters():
                param -= config.learning_rate * grads[name]
            step += 1
            pending.append(loss)
            if step % config.eval_every == 0:
                rows.append(MetricRow(step, float(np.mean(pending)), evaluate(net, x_test, y_test)))
                logger.debug(f"{net.kind} step {step}: loss {rows[-1].train_loss:.4f}, accuracy {rows[-1].test_accuracy:.3f}")
                pending = []
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break
        if done:
            break
    if pending:
        rows.append(MetricRow(step, float(np.mean(pending)), evaluate(net, x_test, y_test)))
    return rows


def build_reference_cnn(seed: int, input_shape: Shape = (28, 28, 4)) -> Network:
    """CONV1(5@5x5) - POOL1(avg 5x5, s2) - CONV2(12@3x3) - POOL2(max 2x2, s2) - FC(4)"""
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D("conv1", input_shape[2], 5, 5, 1, rng),
        ReLU("relu1"),
        Pool2D("pool1", PoolKind.AVERAGE, 5, 2),
        Conv2D("conv2", 5, 12, 3, 1, rng),
        ReLU("relu2"),
        Pool2D("pool2", PoolKind.MAX, 2, 2),
        Flatten("flatten"),
    ]
    return _with_head(layers, input_shape, rng, "cnn")


def build_reference_qnn(seed: int, feature_shape: Shape = (5, 5, 5)) -> Network:
    """Feature map - CONV2(12@3x3) - POOL2(max 2x2, s2) - FC(4)"""
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D("conv2", feature_shape[2], 12, 3, 1, rng),
        ReLU("relu2"),
        Pool2D("pool2", PoolKind.MAX, 2, 2),
        Flatten("flatten"),
    ]
    return _with_head(layers, feature_shape, rng, "qnn")


def _with_head(layers: List[Layer], input_shape: Shape, rng: np.random.Generator, kind: str) -> Network:
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers.append(Dense("fc", shape[0], NUM_CLASSES, rng))
    return Network(layers, input_shape, kind)

"""Desk-scale fixtures: synthetic 10-class task and tiny quantized MLPs.

The dataset is 10 Gaussian blobs around u8 prototype patterns in 64
dimensions (8x8), separable enough that a small float MLP clears 80% test
accuracy while a scrambled model collapses to chance. Training is plain
minibatch SGD in float; quantization happens afterwards with power-of-two
weight scales and calibrated requant shifts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import ceil, log2

import numpy as np

from .core import (
    ConfigError,
    LayerSpec,
    ModelDescriptor,
    QuantMatrix,
    QuantModel,
    spawn_rng,
)

TDPD_MAGIC = b"TDPD"

N_CLASSES = 10
INPUT_DIM = 64


class TrainingError(RuntimeError):
    """Training failed to reach a usable model."""


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    train_x: np.ndarray  # u8 (n_train, 64)
    train_y: np.ndarray  # u8 (n_train,)
    test_x: np.ndarray
    test_y: np.ndarray
    seed: int
    noise: float

    @property
    def n_train(self) -> int:
        return int(self.train_x.shape[0])

    @property
    def n_test(self) -> int:
        return int(self.test_x.shape[0])


def generate_dataset(
    seed: int, n_train: int, n_test: int, noise: float = 70.0
) -> SyntheticDataset:
    """Deterministic class-conditional blobs with balanced labels."""
    if n_train < 100 or n_test < 100:
        raise ConfigError("need at least 100 train and 100 test samples")
    proto_rng = spawn_rng(seed, "dataset-prototypes")
    prototypes = proto_rng.uniform(70.0, 186.0, size=(N_CLASSES, INPUT_DIM))

    def draw(count: int, tag: str) -> tuple[np.ndarray, np.ndarray]:
        rng = spawn_rng(seed, "dataset-samples", tag)
        labels = np.arange(count) % N_CLASSES
        rng.shuffle(labels)
        raw = prototypes[labels] + rng.normal(0.0, noise, size=(count, INPUT_DIM))
        features = np.clip(np.rint(raw), 0, 255).astype(np.uint8)
        return features, labels.astype(np.uint8)

    train_x, train_y = draw(n_train, "train")
    test_x, test_y = draw(n_test, "test")
    return SyntheticDataset(train_x, train_y, test_x, test_y, seed, noise)


def save_dataset(ds: SyntheticDataset, path: str) -> None:
    """Container: magic, then u32 dim/classes/train/test counts, then raw u8 arrays."""
    with open(path, "wb") as fh:
        fh.write(TDPD_MAGIC)
        fh.write(struct.pack("<IIII", INPUT_DIM, N_CLASSES, ds.n_train, ds.n_test))
        fh.write(ds.train_x.tobytes())
        fh.write(ds.train_y.tobytes())
        fh.write(ds.test_x.tobytes())
        fh.write(ds.test_y.tobytes())


def load_dataset(path: str) -> SyntheticDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TDPD_MAGIC:
        raise ConfigError("not a dataset container")
    dim, classes, n_train, n_test = struct.unpack_from("<IIII", blob, 4)
    if dim != INPUT_DIM or classes != N_CLASSES:
        raise ConfigError("container geometry does not match this toolkit")
    offset = 20
    def take(count: int, shape) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset)
        offset += count
        return arr.reshape(shape).copy()

    train_x = take(n_train * dim, (n_train, dim))
    train_y = take(n_train, (n_train,))
    test_x = take(n_test * dim, (n_test, dim))
    test_y = take(n_test, (n_test,))
    return SyntheticDataset(train_x, train_y, test_x, test_y, seed=-1, noise=float("nan"))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    float_weights: tuple[np.ndarray, ...]
    model: QuantModel
    float_accuracy: float
    quant_accuracy: float


def _float_forward(weights, x):
    a = x
    for w in weights[:-1]:
        a = np.maximum(a @ w, 0.0)
    return a @ weights[-1]


def _float_accuracy(weights, x, y) -> float:
    logits = _float_forward(weights, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train_mlp(
    ds: SyntheticDataset,
    layer_dims: tuple[int, ...] = (64, 80, 48, 10),
    epochs: int = 30,
    seed: int = 0,
    lr: float = 0.1,
    batch_size: int = 64,
) -> TrainedModel:
    """Plain SGD on fully-connected ReLU layers, then post-training quantization."""
    if layer_dims[0] != INPUT_DIM or layer_dims[-1] != N_CLASSES:
        raise ConfigError(f"layer dims must start {INPUT_DIM} and end {N_CLASSES}")
    init_rng = spawn_rng(seed, "train-init")
    weights = [
        init_rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        for fan_in, fan_out in zip(layer_dims, layer_dims[1:])
    ]
    x_train = ds.train_x.astype(np.float64) / 256.0
    y_train = ds.train_y.astype(np.int64)
    onehot = np.eye(N_CLASSES)[y_train]
    order_rng = spawn_rng(seed, "train-order")
    n = x_train.shape[0]
    for _ in range(epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb, tb = x_train[idx], onehot[idx]
            acts = [xb]
            a = xb
            for w in weights[:-1]:
                a = np.maximum(a @ w, 0.0)
                acts.append(a)
            logits = a @ weights[-1]
            logits -= logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            grad = (probs - tb) / len(idx)
            for li in range(len(weights) - 1, -1, -1):
                step = acts[li].T @ grad
                if li > 0:
                    grad = (grad @ weights[li].T) * (acts[li] > 0)
                weights[li] -= lr * step

    x_test = ds.test_x.astype(np.float64) / 256.0
    float_acc = _float_accuracy(weights, x_test, ds.test_y)
    if epochs > 0 and float_acc < 0.5:
        raise TrainingError(
            f"training diverged (test accuracy {float_acc:.3f}); try another seed"
        )
    model = quantize_weights(weights, ds)
    from .system import model_accuracy  # deferred to avoid an import cycle

    quant_acc = model_accuracy(model, ds.test_x, ds.test_y)
    return TrainedModel(tuple(w.copy() for w in weights), model, float_acc, quant_acc)


def quantize_weights(
    float_weights, ds: SyntheticDataset, calibration: int = 512
) -> QuantModel:
    """Power-of-two-scale int8 weights plus calibrated requant shifts.

    Each hidden layer's shift is the smallest one keeping u8 saturation under
    1% on the calibration slice of the training data.
    """
    mats = []
    for w in float_weights:
        peak = float(np.max(np.abs(w)))
        if peak == 0.0:
            exp = 0
        else:
            exp = ceil(log2(peak / 127.0))
        q = np.clip(np.rint(w / (2.0 ** exp)), -128, 127).astype(np.int8)
        mats.append(QuantMatrix(q, exp))

    calib = ds.train_x[:calibration].astype(np.int64)
    shifts = []
    a = calib
    for li, qm in enumerate(mats):
        acc = a @ qm.values.astype(np.int64)
        if li == len(mats) - 1:
            shifts.append(0)
            break
        acc = np.maximum(acc, 0)
        shift = 0
        while np.mean((acc >> shift) > 255) >= 0.01:
            shift += 1
        shifts.append(shift)
        a = np.clip(acc >> shift, 0, 255)

    depth = len(mats)
    specs = tuple(
        LayerSpec(
            kind="fc",
            m=qm.m,
            n=qm.n,
            activation="none" if li == depth - 1 else "relu",
        )
        for li, qm in enumerate(mats)
    )
    return QuantModel(ModelDescriptor(specs), tuple(mats), tuple(shifts))

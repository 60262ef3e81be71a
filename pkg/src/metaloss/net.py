"""Small dense softmax classifier trained by the decomposed update rule.

The trainer never forms a loss value.  Each step evaluates the per-logit
gamma coefficients of the chosen loss family at the current outputs and
applies

    theta <- theta + eta * (1/n) * sum_k gamma_k * grad_theta(h_k)

with the gradients obtained by ordinary backpropagation through the
softmax and the tanh hidden layers.  Per-sample logging hooks feed the
attraction-trace analysis.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class ConfigurationError(ValueError):
    """Shapes or settings that cannot be trained with."""


class IdxFormatError(ValueError):
    """Malformed IDX file; message carries the byte offset of the problem."""


class TrainingDivergedError(RuntimeError):
    """Raised when an entire epoch's steps were aborted or weights left float range.

    Carries the partial `run_log` and the `network` in its failed state.
    """

    def __init__(self, message: str, run_log: "RunLog", network: "Network"):
        super().__init__(message)
        self.run_log = run_log
        self.network = network


@dataclass
class Dataset:
    """Feature matrix with integer labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or len(self.features) == 0:
            raise ValueError("features must be a nonempty (samples, dim) matrix")
        if self.labels.shape != (len(self.features),):
            raise ValueError("labels must align with features")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class TrainConfig:
    eta: float
    epochs: int
    rng_seed: int = 0
    logit_floor: float = 1e-12
    log_per_sample: bool = False

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


@dataclass
class RunLog:
    """Per-epoch training record, logits logged after each epoch's sweep."""

    n_classes: int
    accuracy: list = field(default_factory=list)
    aborted_steps: list = field(default_factory=list)
    target_h: list = field(default_factory=list)
    mean_nontarget_h: list = field(default_factory=list)
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "accuracy": [float(a) for a in self.accuracy],
            "aborted_steps": [int(a) for a in self.aborted_steps],
            "diverged": self.diverged,
        }


class Network:
    """Dense feedforward classifier: tanh hidden layers, terminal softmax.

    Weights start uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with zero
    biases, so a fresh network's expected output is uniform at 1/n.
    """

    def __init__(self, layer_sizes, rng_seed: int = 0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigurationError(f"bad layer sizes {sizes}")
        if sizes[-1] < 2:
            raise ConfigurationError("output layer needs at least 2 classes")
        self.layer_sizes = tuple(sizes)
        rng = np.random.default_rng(rng_seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [b.ravel() for b in self.biases])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.num_params(),):
            raise ConfigurationError("flat parameter vector has wrong length")
        pos = 0
        for w in self.weights:
            w[...] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
        for b in self.biases:
            b[...] = flat[pos : pos + b.size]
            pos += b.size

    def params_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Scaled logits for one sample (dim,) or a batch (N, dim)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(
                f"input dim {x.shape[-1]} does not match network input {self.input_dim}"
            )
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w + b)
        f = a @ self.weights[-1] + self.biases[-1]
        f = f - f.max(axis=-1, keepdims=True)
        e = np.exp(f)
        return e / e.sum(axis=-1, keepdims=True)

    def forward_cached(self, x: np.ndarray):
        """Single-sample forward pass keeping activations for backprop."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ConfigurationError(
                f"input shape {x.shape} does not match network input ({self.input_dim},)"
            )
        activations = [x]
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w + b)
            activations.append(a)
        f = a @ self.weights[-1] + self.biases[-1]
        f = f - f.max()
        e = np.exp(f)
        h = e / e.sum()
        return h, activations

    def backward_gamma(self, h: np.ndarray, activations: list, gamma: np.ndarray):
        """Gradients of sum_k gamma_k * h_k (gamma held fixed).

        Returns (weight_grads, bias_grads, input_grad).  The softmax layer
        contracts gamma with the Jacobian: d/df_j = h_j * (gamma_j - <gamma, h>).
        """
        delta = h * (gamma - gamma @ h)
        weight_grads = [None] * len(self.weights)
        bias_grads = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            a_prev = activations[layer]
            weight_grads[layer] = np.outer(a_prev, delta)
            bias_grads[layer] = delta
            delta = delta @ self.weights[layer].T
            if layer > 0:
                delta = delta * (1.0 - a_prev * a_prev)
        return weight_grads, bias_grads, delta


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def accuracy(net: Network, dataset: Dataset) -> float:
    probs = net.forward(dataset.features)
    return float(np.mean(np.argmax(probs, axis=1) == dataset.labels))


def decomposed_step(net: Network, x: np.ndarray, y_onehot: np.ndarray, gamma_fn: Callable, config: TrainConfig) -> bool:
    """Apply one per-sample update; returns False if the step was aborted.

    Outputs are clamped to the configured floor before gamma evaluation so
    division-based losses stay defined.  Steps whose gamma or gradients are
    not finite are skipped rather than clamped, keeping runaway dynamics
    visible to the caller.
    """
    h, activations = net.forward_cached(x)
    gamma = np.asarray(gamma_fn(np.maximum(h, config.logit_floor), y_onehot), dtype=float)
    if not np.all(np.isfinite(gamma)):
        return False
    weight_grads, bias_grads, _ = net.backward_gamma(h, activations, gamma)
    if not all(np.all(np.isfinite(g)) for g in weight_grads):
        return False
    scale = config.eta / net.n_classes
    for w, b, gw, gb in zip(net.weights, net.biases, weight_grads, bias_grads):
        w += scale * gw
        b += scale * gb
    return True


def train(net: Network, dataset: Dataset, gamma_fn: Callable, config: TrainConfig):
    """SGD over single samples; returns (net, RunLog).

    Sample order is reshuffled every epoch from the configured seed, so a
    fixed seed reproduces the run exactly.  Raises TrainingDivergedError
    (carrying the partial log) when an epoch aborts every step or weights
    leave float range.
    """
    if dataset.n_classes != net.n_classes:
        raise ConfigurationError("dataset class count does not match network output")
    rng = np.random.default_rng(config.rng_seed)
    labels_onehot = one_hot(dataset.labels, dataset.n_classes)
    run_log = RunLog(n_classes=dataset.n_classes)
    n_samples = len(dataset)
    for _ in range(config.epochs):
        aborted = 0
        for i in rng.permutation(n_samples):
            if not decomposed_step(net, dataset.features[i], labels_onehot[i], gamma_fn, config):
                aborted += 1
        if aborted == n_samples or not net.params_finite():
            run_log.diverged = True
            raise TrainingDivergedError(
                f"training diverged ({aborted}/{n_samples} steps aborted)", run_log, net
            )
        probs = net.forward(dataset.features)
        run_log.accuracy.append(float(np.mean(np.argmax(probs, axis=1) == dataset.labels)))
        run_log.aborted_steps.append(aborted)
        if config.log_per_sample:
            target_h = probs[np.arange(n_samples), dataset.labels]
            run_log.target_h.append(target_h.copy())
            run_log.mean_nontarget_h.append((1.0 - target_h) / (dataset.n_classes - 1))
    return net, run_log


def make_blobs(n_classes: int, samples_per_class: int, dim: int, spread: float, rng_seed: int) -> Dataset:
    """Gaussian clusters at fixed axis-aligned means, deterministic per seed."""
    if n_classes < 2 or samples_per_class < 1 or dim < 1 or spread <= 0:
        raise ValueError("all blob parameters must be positive (and n_classes >= 2)")
    rng = np.random.default_rng(rng_seed)
    features = []
    for c in range(n_classes):
        mean = np.zeros(dim)
        level, axis = divmod(c, dim)
        mean[axis] = 2.0 * (level + 1) * (1.0 if level % 2 == 0 else -1.0)
        features.append(rng.normal(mean, spread, size=(samples_per_class, dim)))
    labels = np.repeat(np.arange(n_classes), samples_per_class)
    return Dataset(np.concatenate(features), labels, n_classes)


def split_dataset(dataset: Dataset, val_fraction: float, rng_seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic seeded shuffle into (train, validation)."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("validation fraction must lie in (0, 1)")
    perm = np.random.default_rng(rng_seed).permutation(len(dataset))
    n_val = max(1, int(round(len(dataset) * val_fraction)))
    if n_val >= len(dataset):
        raise ValueError("validation split would consume the whole dataset")
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (
        Dataset(dataset.features[train_idx], dataset.labels[train_idx], dataset.n_classes),
        Dataset(dataset.features[val_idx], dataset.labels[val_idx], dataset.n_classes),
    )


def _read_be32(data: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(data):
        raise IdxFormatError(f"{path}: truncated header at byte offset {offset}")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Load an IDX image/label pair, pixels scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        img_data = fh.read()
    with open(labels_path, "rb") as fh:
        lbl_data = fh.read()

    magic = _read_be32(img_data, 0, str(images_path))
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x} at byte offset 0")
    count = _read_be32(img_data, 4, str(images_path))
    rows = _read_be32(img_data, 8, str(images_path))
    cols = _read_be32(img_data, 12, str(images_path))
    expected = 16 + count * rows * cols
    if len(img_data) < expected:
        raise IdxFormatError(
            f"{images_path}: truncated pixel data at byte offset {len(img_data)} (expected {expected} bytes)"
        )

    magic = _read_be32(lbl_data, 0, str(labels_path))
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0")
    lbl_count = _read_be32(lbl_data, 4, str(labels_path))
    if lbl_count != count:
        raise IdxFormatError(f"{labels_path}: label count {lbl_count} does not match image count {count}")
    if len(lbl_data) < 8 + count:
        raise IdxFormatError(
            f"{labels_path}: truncated label data at byte offset {len(lbl_data)} (expected {8 + count} bytes)"
        )

    take = count if limit is None else min(limit, count)
    pixels = np.frombuffer(img_data, dtype=np.uint8, count=take * rows * cols, offset=16)
    features = pixels.reshape(take, rows * cols).astype(float) / 255.0
    labels = np.frombuffer(lbl_data, dtype=np.uint8, count=take, offset=8).astype(int)
    n_classes = max(int(labels.max()) + 1, 2) if take else 2
    return Dataset(features, labels, n_classes)


def save_checkpoint(net: Network, path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    net = Network(doc["layer_sizes"])
    for w, flat in zip(net.weights, doc["weights"]):
        w[...] = np.asarray(flat, dtype=float).reshape(w.shape)
    for b, vals in zip(net.biases, doc["biases"]):
        b[...] = np.asarray(vals, dtype=float)
    return net

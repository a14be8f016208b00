"""Client-side learner: a small ReLU MLP trained with mini-batch SGD.

The server-side algorithms only ever see flattened parameter vectors, so the
client model is deliberately simple: fully-connected layers, cross-entropy
loss, plain SGD (no momentum or weight decay). ``flatten``/``unflatten``
convert between :class:`LocalModel` and :class:`~fedcedar.params.ParamVector`
using the manifest layout ``w1, b1, w2, b2, ...``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .params import ManifestMismatchError, ParamVector, ShapeManifest
from .seeds import stream

if TYPE_CHECKING:
    from .data import ClientDataset


class ArchitectureMismatchError(ManifestMismatchError):
    """A ParamVector's manifest does not describe an MLP of the expected shape."""


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths from input dimension through hidden sizes to class count."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("architecture needs at least input and output sizes")
        if any(s <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    def manifest(self) -> ShapeManifest:
        entries = []
        for i, (d_in, d_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:]), start=1):
            entries.append((f"w{i}", (d_in, d_out)))
            entries.append((f"b{i}", (d_out,)))
        return ShapeManifest(tuple(entries))


@dataclass(frozen=True, eq=False)
class LocalModel:
    """One client's MLP parameters (immutable; training returns a new model)."""

    architecture: MlpArchitecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        sizes = self.architecture.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match architecture depth")
        frozen_w, frozen_b = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64, order="C")
            b = np.array(b, dtype=np.float64, order="C")
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"layer {i + 1} tensors {w.shape}/{b.shape} inconsistent with "
                    f"architecture {sizes}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i + 1} contains non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
            frozen_w.append(w)
            frozen_b.append(b)
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    local_epochs: int = 5
    batch_size: int = 16
    rng_seed: int = 0

    def __post_init__(self) -> None:
        # 0 is tolerated so a no-op update step stays expressible in tests.
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must be in (0, 1]: {self.learning_rate}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be positive: {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive: {self.batch_size}")


def init_model(
    architecture: MlpArchitecture, rng_seed: int, init_scale: float = 1.0
) -> LocalModel:
    """He-scaled Gaussian weights times init_scale, zero biases; seed-deterministic.

    init_scale < 1 shrinks the shared random starting point so that trained
    parameter vectors are dominated by what the data taught them rather than
    by the common initialization.
    """
    rng = stream(rng_seed)
    weights, biases = [], []
    for d_in, d_out in zip(architecture.layer_sizes, architecture.layer_sizes[1:]):
        std = init_scale * np.sqrt(2.0 / d_in)
        weights.append(rng.normal(0.0, std, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return LocalModel(architecture, tuple(weights), tuple(biases))


def forward(model: LocalModel, inputs: np.ndarray) -> np.ndarray:
    """Logits for a (batch, input_dim) matrix; ReLU between layers, none after."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.architecture.input_dim:
        raise ValueError(
            f"inputs of shape {x.shape} do not match input dim "
            f"{model.architecture.input_dim}"
        )
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ w + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of a batch, stabilized by max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    classes = logits.shape[1]
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels outside [0, {classes})")
    log_p = _log_softmax(logits)
    return float(-log_p[np.arange(len(labels)), labels].mean())


def _backprop_raw(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    inputs: np.ndarray,
    labels: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-layer gradients of the mean CE loss."""
    x = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    activations = [x]
    pre_acts = []
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = activations[-1] @ w + b
        pre_acts.append(z)
        activations.append(np.maximum(z, 0.0) if i < last else z)

    logits = activations[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    batch = len(labels)
    delta = probs
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch

    grads_w: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(biases)  # type: ignore[list-item]
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre_acts[i - 1] > 0.0)
    return grads_w, grads_b


def gradient(model: LocalModel, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Flat analytic gradient of mean CE loss, in flatten() layout."""
    labels = np.asarray(labels)
    classes = model.architecture.class_count
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels outside [0, {classes})")
    grads_w, grads_b = _backprop_raw(model.weights, model.biases, inputs, labels)
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.reshape(-1))
        parts.append(gb)
    return np.concatenate(parts)


def train_local(model: LocalModel, data: "ClientDataset", cfg: TrainConfig) -> LocalModel:
    """Mini-batch SGD for cfg.local_epochs passes over the client's train set.

    Shuffling uses a stream derived from (cfg.rng_seed, epoch), so the result
    is independent of how many other clients trained before this one. The
    last, possibly short, batch of each epoch is still used. The input model
    is unchanged; the trained copy is returned.
    """
    x, y = data.train_features, data.train_labels
    n = len(y)
    if n == 0:
        raise ValueError(f"client {data.client_id} has no training examples")
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    for epoch in range(cfg.local_epochs):
        order = stream(cfg.rng_seed, epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grads_w, grads_b = _backprop_raw(weights, biases, x[idx], y[idx])
            for i in range(len(weights)):
                weights[i] -= cfg.learning_rate * grads_w[i]
                biases[i] -= cfg.learning_rate * grads_b[i]
    return LocalModel(model.architecture, tuple(weights), tuple(biases))


def evaluate(model: LocalModel, data: "ClientDataset") -> float:
    """Fraction of test examples whose argmax logit equals the label.

    np.argmax breaks ties toward the lowest class index.
    """
    if len(data.test_labels) == 0:
        raise ValueError(f"client {data.client_id} has no test examples")
    logits = forward(model, data.test_features)
    predictions = logits.argmax(axis=1)
    return float((predictions == data.test_labels).mean())


def flatten(model: LocalModel) -> ParamVector:
    """Concatenate all tensors row-major in manifest order."""
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.reshape(-1))
        parts.append(b)
    return ParamVector(np.concatenate(parts), model.architecture.manifest())


def unflatten(vector: ParamVector) -> LocalModel:
    """Rebuild the MLP a manifest describes; inverse of :func:`flatten`."""
    entries = vector.manifest.entries
    if len(entries) % 2 != 0 or not entries:
        raise ArchitectureMismatchError("manifest does not pair weights with biases")
    layer_sizes = [entries[0][1][0]] if len(entries[0][1]) == 2 else None
    if layer_sizes is None:
        raise ArchitectureMismatchError(f"first manifest entry {entries[0]} is not a matrix")
    weights, biases = [], []
    pieces = {name: vector.coefficients[sl].reshape(dims)
              for name, dims, sl in vector.manifest.slices()}
    for i in range(len(entries) // 2):
        w_name, w_dims = entries[2 * i]
        b_name, b_dims = entries[2 * i + 1]
        if w_name != f"w{i + 1}" or b_name != f"b{i + 1}":
            raise ArchitectureMismatchError(
                f"unexpected manifest entries ({w_name}, {b_name}) at layer {i + 1}"
            )
        if len(w_dims) != 2 or len(b_dims) != 1 or w_dims[1] != b_dims[0] \
                or w_dims[0] != layer_sizes[-1]:
            raise ArchitectureMismatchError(
                f"layer {i + 1} dims {w_dims}/{b_dims} do not chain into an MLP"
            )
        layer_sizes.append(w_dims[1])
        weights.append(pieces[w_name])
        biases.append(pieces[b_name])
    arch = MlpArchitecture(tuple(layer_sizes))
    return LocalModel(arch, tuple(weights), tuple(biases))

"""Dense numeric core: softmax classifier, cross-entropy, analytic gradients.

Everything here is a pure function of its inputs and safe to call from any
thread. These are the contract-level operations: model evaluation, single
gradients, single SGD steps. The fused multi-epoch training loop lives in
the kernel backends (see :mod:`fedar.backend`) and is checked against these
functions in the test suite.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

# Probabilities are clamped here before the log so loss stays finite.
LOG_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Flat softmax-classifier parameters: one weight matrix plus bias."""

    weights: np.ndarray  # (num_features, num_classes)
    bias: np.ndarray  # (num_classes,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-d and bias 1-d")
        if self.weights.shape[1] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight columns {self.weights.shape[1]}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DataError("model parameters contain NaN or Inf")

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])


@dataclass(frozen=True, eq=False)
class Gradient:
    """Gradient of the mean loss, same shape as the parameters it came from."""

    weights: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True, eq=False)
class Batch:
    """A minibatch of flattened inputs with integer class labels."""

    inputs: np.ndarray  # (batch_size, num_features), values in [0, 1]
    labels: np.ndarray  # (batch_size,) ints

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ShapeError("inputs must be 2-d and labels 1-d")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]


def zero_params(num_features: int, num_classes: int) -> ModelParams:
    return ModelParams(
        np.zeros((num_features, num_classes)), np.zeros(num_classes)
    )


def _check_shapes(params: ModelParams, batch: Batch):
    if batch.inputs.shape[1] != params.num_features:
        raise ShapeError(
            f"batch has {batch.inputs.shape[1]} features, model expects {params.num_features}"
        )


def _check_labels(params: ModelParams, batch: Batch):
    if len(batch) and (
        batch.labels.min() < 0 or batch.labels.max() >= params.num_classes
    ):
        raise DataError(
            f"labels must lie in [0, {params.num_classes}), got range "
            f"[{batch.labels.min()}, {batch.labels.max()}]"
        )


def forward(params: ModelParams, batch: Batch) -> np.ndarray:
    """Class probabilities, softmax(x W + b) with max-subtraction for stability."""
    _check_shapes(params, batch)
    logits = batch.inputs @ params.weights + params.bias
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def loss(params: ModelParams, batch: Batch) -> float:
    """Mean cross-entropy of the true labels; always finite."""
    _check_labels(params, batch)
    probs = forward(params, batch)
    picked = probs[np.arange(len(batch)), batch.labels]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).mean())


def gradient(params: ModelParams, batch: Batch) -> Gradient:
    """Analytic gradient of :func:`loss` w.r.t. weights and bias."""
    _check_labels(params, batch)
    probs = forward(params, batch)
    probs[np.arange(len(batch)), batch.labels] -= 1.0
    n = len(batch)
    return Gradient(batch.inputs.T @ probs / n, probs.mean(axis=0))


def sgd_step(params: ModelParams, grad: Gradient, eta: float) -> ModelParams:
    """One gradient-descent step, ``params - eta * grad``."""
    if eta < 0:
        raise DataError(f"learning rate must be nonnegative, got {eta}")
    return ModelParams(
        params.weights - eta * grad.weights, params.bias - eta * grad.bias
    )


def accuracy(params: ModelParams, batch: Batch) -> float:
    """Fraction of rows whose argmax matches the label; ties go to the lowest class."""
    if len(batch) == 0:
        raise DataError("accuracy is undefined for an empty batch")
    probs = forward(params, batch)
    # np.argmax returns the first maximum, which is the required tie-break.
    return float((probs.argmax(axis=1) == batch.labels).mean())


def param_distance(a: ModelParams, b: ModelParams) -> float:
    """L2 norm of the flattened parameter difference."""
    if a.weights.shape != b.weights.shape or a.bias.shape != b.bias.shape:
        raise ShapeError("parameter shapes differ")
    return float(np.sqrt(((a.weights - b.weights) ** 2).sum() + ((a.bias - b.bias) ** 2).sum()))

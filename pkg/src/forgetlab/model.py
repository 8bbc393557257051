"""Feedforward softmax classifier held in one flat float64 vector.

The whole model is a single 1-D parameter array plus a shape map, so
optimizers, mask perturbations and gradient ledgers can treat a model
as a plain vector. Hidden layers use the rectifier, the output layer is
softmax with max-subtraction stabilization, and a spec without hidden
layers degenerates to multinomial logistic regression.

Initialization scheme (fixed, documented here so checkpoints are
reproducible from a spec alone): weights of each layer are drawn
uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)] using numpy's PCG64
generator seeded with ``spec.seed``; biases start at zero. Layers are
drawn in order, weights before biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .utils import rng_from
from .validation import as_float_matrix, as_label_vector, as_flat_float

# Clamp applied to any probability before a logarithm. Keeps losses
# finite on saturated posteriors without changing well-behaved ones.
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: layer sizes from input to output.

    ``layer_sizes`` must have at least two entries (input and output
    width); between them any number of hidden widths. The output width
    is the class count and must be >= 2.
    """

    layer_sizes: tuple
    seed: int = 0
    hidden_activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output entries")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer_sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ValueError("output layer needs at least 2 classes")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes, self.layer_sizes[1:]))


def shape_map_for(layer_sizes) -> tuple:
    """Offsets and shapes of each layer's weight and bias in the flat vector.

    Returns a tuple of (w_offset, (fan_in, fan_out), b_offset) triples.
    """
    entries = []
    offset = 0
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        w_off = offset
        offset += fan_in * fan_out
        b_off = offset
        offset += fan_out
        entries.append((w_off, (fan_in, fan_out), b_off))
    return tuple(entries)


@dataclass
class ParamVector:
    """Flat float64 parameter vector with its layer shape map."""

    values: np.ndarray
    shape_map: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter values must be a flat 1-D array")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shape_map)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ValueError("replacement values have the wrong length")
        return ParamVector(values, self.shape_map)

    def layers(self):
        """Yield (W, b) views into the flat vector, one pair per layer."""
        for w_off, (fan_in, fan_out), b_off in self.shape_map:
            W = self.values[w_off:w_off + fan_in * fan_out].reshape(fan_in, fan_out)
            b = self.values[b_off:b_off + fan_out]
            yield W, b

    def __len__(self) -> int:
        return self.values.size


def build_model(spec: ModelSpec) -> ParamVector:
    """Seeded initial parameters for a spec. Deterministic per spec+seed."""
    rng = rng_from(spec.seed)
    chunks = []
    for fan_in, fan_out in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).ravel())
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), shape_map_for(spec.layer_sizes))


def zeros_like_params(spec: ModelSpec) -> ParamVector:
    return ParamVector(np.zeros(spec.n_params), shape_map_for(spec.layer_sizes))


def _check_params(params: ParamVector, spec: ModelSpec) -> None:
    if len(params) != spec.n_params:
        raise ValueError(f"parameter vector has {len(params)} entries, "
                         f"spec {spec.layer_sizes} needs {spec.n_params}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(params: ParamVector, spec: ModelSpec, X: np.ndarray):
    """Forward pass keeping pre-activations for backprop.

    Returns (probs, activations, preacts) where activations[0] is X and
    preacts[i] is the input to layer i's nonlinearity.
    """
    activations = [X]
    preacts = []
    a = X
    layers = list(params.layers())
    for W, b in layers[:-1]:
        z = a @ W + b
        preacts.append(z)
        a = np.maximum(z, 0.0)
        activations.append(a)
    W, b = layers[-1]
    logits = a @ W + b
    preacts.append(logits)
    probs = softmax(logits)
    return probs, activations, preacts


def forward_batch(params: ParamVector, spec: ModelSpec, X) -> np.ndarray:
    """Class posteriors for a batch, shape (n, n_classes)."""
    X = as_float_matrix(X)
    _check_params(params, spec)
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"X has {X.shape[1]} features, spec expects {spec.input_dim}")
    probs, _, _ = _forward_cached(params, spec, X)
    return probs


def _backprop(params: ParamVector, spec: ModelSpec, activations, preacts,
              d_logits: np.ndarray) -> ParamVector:
    """Exact gradient of a scalar loss given d(loss)/d(logits)."""
    grad = np.zeros_like(params.values)
    gview = ParamVector(grad, params.shape_map)
    layers = list(params.layers())
    glayers = list(gview.layers())
    delta = d_logits
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = glayers[i]
        gW += activations[i].T @ delta
        gb += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * (preacts[i - 1] > 0.0)
    return gview


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood with the probability floor applied."""
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.clip(picked, PROB_FLOOR, 1.0)).mean())


def grad_cross_entropy(params: ParamVector, spec: ModelSpec, X, labels,
                       validate: bool = True):
    """Mean cross-entropy loss and its exact gradient.

    Rows whose true-class probability sits at the clamp floor contribute
    a constant to the loss and therefore a zero gradient; this keeps the
    analytic gradient consistent with finite differences of the clamped
    loss. ``validate=False`` skips input conversion for hot callers that
    pass slices of already-validated arrays.
    """
    if validate:
        X = as_float_matrix(X)
        labels = as_label_vector(labels, n_classes=spec.n_classes)
        if len(labels) != len(X):
            raise ValueError("X and labels must have matching length")
        _check_params(params, spec)
        if X.shape[1] != spec.input_dim:
            raise ValueError(f"X has {X.shape[1]} features, "
                             f"spec expects {spec.input_dim}")

    probs, activations, preacts = _forward_cached(params, spec, X)
    n = len(labels)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.clip(picked, PROB_FLOOR, 1.0)).mean())

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    clamped = picked <= PROB_FLOOR
    if np.any(clamped):
        d_logits[clamped] = 0.0
    grad = _backprop(params, spec, activations, preacts, d_logits)
    return loss, grad


def grad_from_output(params: ParamVector, spec: ModelSpec, X, d_probs):
    """Gradient of a scalar loss specified by d(loss)/d(posterior).

    ``d_probs`` is either an (n, p) array or a callable receiving the
    posteriors and returning that array, which lets callers derive the
    loss gradient from the very forward pass being backpropagated.
    Converts the posterior-space gradient through the softmax Jacobian.
    Returns (probs, grad).
    """
    X = as_float_matrix(X)
    _check_params(params, spec)
    probs, activations, preacts = _forward_cached(params, spec, X)
    if callable(d_probs):
        d_probs = d_probs(probs)
    inner = (probs * d_probs).sum(axis=1, keepdims=True)
    d_logits = probs * (d_probs - inner)
    grad = _backprop(params, spec, activations, preacts, d_logits)
    return probs, grad


def predict_labels(params: ParamVector, spec: ModelSpec, X) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(forward_batch(params, spec, X), axis=1)


def evaluate(params: ParamVector, spec: ModelSpec, X, labels) -> float:
    """Accuracy on a labeled set."""
    X = as_float_matrix(X)
    labels = as_label_vector(labels, n_classes=spec.n_classes)
    if len(labels) != len(X):
        raise ValueError("X and labels must have matching length")
    probs = forward_batch(params, spec, X)
    return float((np.argmax(probs, axis=1) == labels).mean())


def finite_difference_gradient(params: ParamVector, spec: ModelSpec, X, labels,
                               h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the clamped cross-entropy.

    Exists for verification; O(n_params) forward passes, so only usable
    on small models.
    """
    X = as_float_matrix(X)
    labels = as_label_vector(labels, n_classes=spec.n_classes)
    base = params.values
    fd = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + h
        up = cross_entropy(forward_batch(params.with_values(bumped), spec, X), labels)
        bumped[i] = base[i] - h
        down = cross_entropy(forward_batch(params.with_values(bumped), spec, X), labels)
        fd[i] = (up - down) / (2.0 * h)
    return fd

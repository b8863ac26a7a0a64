"""Fully connected ReLU network with a softmax cross-entropy head."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import NumericError, Prng, ShapeError, as_matrix, check_finite

RELU = "relu"
SOFTMAX_OUTPUT = "softmax_output"


class SpecError(ValueError):
    pass


class CacheError(ValueError):
    pass


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = RELU

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise SpecError(f"layer dims must be positive: {self.in_dim}->{self.out_dim}")
        if self.activation not in (RELU, SOFTMAX_OUTPUT):
            raise SpecError(f"unknown activation {self.activation!r}")


def mlp_specs(in_dim: int, hidden: list[int] | tuple[int, ...], n_classes: int) -> list[LayerSpec]:
    """ReLU hidden layers followed by a softmax output layer."""
    dims = [in_dim, *hidden, n_classes]
    specs = [LayerSpec(a, b, RELU) for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], SOFTMAX_OUTPUT))
    return specs


def validate_specs(specs) -> list[LayerSpec]:
    specs = list(specs)
    if not specs:
        raise SpecError("an MLP needs at least one layer")
    for k, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.out_dim != b.in_dim:
            raise SpecError(f"layer {k} outputs {a.out_dim} but layer {k + 1} expects {b.in_dim}")
    for k, s in enumerate(specs[:-1]):
        if s.activation == SOFTMAX_OUTPUT:
            raise SpecError(f"softmax_output may only be used on the final layer (found at layer {k})")
    return specs


@dataclass
class Mlp:
    layers: list[LayerSpec]
    weights: list[np.ndarray]  # in_dim x out_dim per layer
    biases: list[np.ndarray]  # out_dim per layer

    def __post_init__(self):
        self.layers = validate_specs(self.layers)
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise SpecError("one weight matrix and bias vector required per layer")
        for s, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (s.in_dim, s.out_dim) or b.shape != (s.out_dim,):
                raise ShapeError(f"parameters {w.shape}/{b.shape} do not match layer {s}")

    @property
    def n_params(self) -> int:
        return parameter_count(self.layers)

    def params(self) -> list[np.ndarray]:
        """Weights then bias per layer, interleaved: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.layers), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def with_params(self, weights, biases) -> "Mlp":
        return Mlp(list(self.layers), list(weights), list(biases))


def parameter_count(specs) -> int:
    return sum(s.in_dim * s.out_dim + s.out_dim for s in specs)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def check_congruent(self, model: Mlp):
        if len(self.weights) != len(model.weights):
            raise ShapeError("gradient layer count differs from model")
        for g, p in zip(self.params(), model.params()):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")

    @classmethod
    def zeros_like(cls, model: Mlp) -> "Gradients":
        return cls([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])


@dataclass
class ForwardCache:
    model: Mlp
    activations: list[np.ndarray]  # input, then post-activation of each hidden layer
    preactivations: list[np.ndarray] = field(default_factory=list)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(specs, rng: Prng) -> Mlp:
    """Xavier-uniform weights, zero biases."""
    specs = validate_specs(specs)
    weights, biases = [], []
    for s in specs:
        r = xavier_bound(s.in_dim, s.out_dim)
        weights.append(rng.uniform(-r, r, size=(s.in_dim, s.out_dim)))
        biases.append(np.zeros(s.out_dim))
    return Mlp(specs, weights, biases)


def forward(model: Mlp, batch) -> tuple[np.ndarray, ForwardCache]:
    """Pre-softmax logits plus the intermediates backward needs."""
    x = as_matrix(batch)
    if x.shape[1] != model.layers[0].in_dim:
        raise ShapeError(f"input has {x.shape[1]} features, model expects {model.layers[0].in_dim}")
    acts, pres = [x], []
    h = x
    last = len(model.layers) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pres.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
    logits = check_finite(pres[-1], "logits")
    return logits, ForwardCache(model, acts, pres)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    d = np.exp(z - lse[:, None])
    d[rows, labels] -= 1.0
    return loss, d / n


def backward(model: Mlp, cache: ForwardCache, dlogits) -> Gradients:
    if cache.model is not model:
        raise CacheError("forward cache was produced by a different model")
    d = as_matrix(dlogits)
    if d.shape != cache.preactivations[-1].shape:
        raise ShapeError(f"dlogits shape {d.shape} does not match logits {cache.preactivations[-1].shape}")
    n_layers = len(model.layers)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        gw[k] = cache.activations[k].T @ d
        gb[k] = d.sum(axis=0)
        if k > 0:
            d = (d @ model.weights[k].T) * (cache.preactivations[k - 1] > 0)
    return Gradients(gw, gb)


def per_example_squared_gradient_sums(model: Mlp, cache: ForwardCache, dlogits) -> Gradients:
    """Sum over batch rows of the squared per-row parameter gradients.

    ``dlogits`` holds one unscaled row per example. For a dense layer the
    per-row weight gradient is an outer product, so the sum of squares
    collapses to ``(a**2).T @ (delta**2)``.
    """
    if cache.model is not model:
        raise CacheError("forward cache was produced by a different model")
    d = as_matrix(dlogits)
    n_layers = len(model.layers)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        gw[k] = (cache.activations[k] ** 2).T @ (d**2)
        gb[k] = (d**2).sum(axis=0)
        if k > 0:
            d = (d @ model.weights[k].T) * (cache.preactivations[k - 1] > 0)
    return Gradients(gw, gb)


def predict(model: Mlp, inputs, batch_size: int = 4096) -> np.ndarray:
    x = as_matrix(inputs)
    out = []
    for i in range(0, x.shape[0], batch_size):
        logits, _ = forward(model, x[i : i + batch_size])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out)


def evaluate_accuracy(model: Mlp, inputs, labels) -> float:
    labels = np.asarray(labels)
    x = as_matrix(inputs)
    if labels.shape != (x.shape[0],):
        raise ShapeError(f"{labels.size} labels for {x.shape[0]} inputs")
    return float(np.mean(predict(model, x) == labels))


def save_checkpoint(path, model: Mlp, seed: int, algorithm_id: str, extra: dict | None = None):
    """Write an ``.npz`` checkpoint with layer specs, parameters and seed record."""
    arrays = {}
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{k}"] = w
        arrays[f"b{k}"] = b
    specs = np.array([[s.in_dim, s.out_dim, s.activation == SOFTMAX_OUTPUT] for s in model.layers], dtype=np.int64)
    meta = {"format_version": 1, "seed": int(seed), "algorithm_id": algorithm_id, **(extra or {})}
    np.savez(path, specs=specs, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[Mlp, dict]:
    with np.load(path, allow_pickle=False) as f:
        meta = json.loads(str(f["meta"]))
        if meta.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        specs = [LayerSpec(int(i), int(o), SOFTMAX_OUTPUT if s else RELU) for i, o, s in f["specs"]]
        weights = [f[f"W{k}"].copy() for k in range(len(specs))]
        biases = [f[f"b{k}"].copy() for k in range(len(specs))]
    return Mlp(specs, weights, biases), meta

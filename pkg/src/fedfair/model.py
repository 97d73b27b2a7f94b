"""Dense feed-forward binary predictor with explicit forward/backward.

Rectifier hidden layers, logistic output. Parameters and gradients are
plain lists of float64 arrays; all losses reach the network through a
per-row seed vector ``d(loss)/d(logit)``, so one backward routine serves
cross-entropy, the fairness-penalized composite, and anything else built
on the predictions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from . import kernels
from .rngstream import stream

# Keeps predictions strictly inside (0, 1) so ratio metrics stay finite.
_P_FLOOR = 1e-12

_CKPT_MAGIC = b"FFCKPT01"


class ShapeMismatchError(ValueError):
    """Parameter/gradient/input shapes do not chain."""


@dataclass
class ModelParams:
    """Ordered dense layers: ``weights[l]`` is (fan_in, fan_out), biases 1-D."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatchError("weights and biases must pair up")
        for l in range(len(self.weights) - 1):
            if self.weights[l].shape[1] != self.weights[l + 1].shape[0]:
                raise ShapeMismatchError(
                    f"layer {l} output width {self.weights[l].shape[1]} does not feed "
                    f"layer {l + 1} input width {self.weights[l + 1].shape[0]}"
                )
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeMismatchError(f"layer {l}: bias shape {b.shape} vs weight {w.shape}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ModelParams":
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, values: np.ndarray) -> "ModelParams":
        """Rebuild params from a flat vector in checkpoint order."""
        out_w, out_b = [], []
        k = 0
        for w, b in zip(self.weights, self.biases):
            out_w.append(values[k : k + w.size].reshape(w.shape).copy())
            k += w.size
            out_b.append(values[k : k + b.size].copy())
            k += b.size
        if k != values.size:
            raise ShapeMismatchError(f"flat vector length {values.size}, expected {k}")
        return ModelParams(weights=out_w, biases=out_b)

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


@dataclass
class Gradient:
    """Shape-congruent with its ModelParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def norm(self) -> float:
        sq = 0.0
        for w, b in zip(self.weights, self.biases):
            sq += float(np.dot(w.ravel(), w.ravel())) + float(np.dot(b, b))
        return float(np.sqrt(sq))

    def scaled(self, factor: float) -> "Gradient":
        return Gradient(
            weights=[factor * w for w in self.weights],
            biases=[factor * b for b in self.biases],
        )

    def add(self, other: "Gradient") -> "Gradient":
        return Gradient(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )

    @staticmethod
    def zeros_like(params: ModelParams) -> "Gradient":
        return Gradient(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
        )


def init_model(layer_dims: Sequence[int], seed: int) -> ModelParams:
    """Seeded init: weights uniform on +-1/sqrt(fan_in), biases zero.

    ``layer_dims`` runs input width through hidden widths to the single
    output unit, e.g. ``[d, 100, 100, 100, 1]``.
    """
    dims = list(layer_dims)
    if len(dims) < 3:
        raise ValueError("need at least one hidden layer: [input, hidden..., 1]")
    if dims[-1] != 1:
        raise ValueError(f"output dimension must be 1, got {dims[-1]}")
    if any(d < 1 for d in dims):
        raise ValueError(f"zero-width layer in {dims}")

    rng = stream(seed, "model-init")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return ModelParams(weights=weights, biases=biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_cached(m: ModelParams, x: np.ndarray):
    """Forward pass returning ``(p, logits, activations)``.

    ``activations[l]`` is the input to layer ``l`` (so ``activations[0]``
    is ``x``); the cache feeds the backward routines.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.weights[0].shape[0]:
        raise ShapeMismatchError(
            f"input of shape {x.shape} does not match model input width "
            f"{m.weights[0].shape[0]}"
        )
    acts = [x]
    a = x
    for l in range(m.n_layers - 1):
        a = np.maximum(a @ m.weights[l] + m.biases[l], 0.0)
        acts.append(a)
    z = (a @ m.weights[-1] + m.biases[-1]).ravel()
    p = np.clip(_sigmoid(z), _P_FLOOR, 1.0 - _P_FLOOR)
    return p, z, acts


def forward(m: ModelParams, x: np.ndarray) -> np.ndarray:
    """Predicted positive-class probabilities, each strictly in (0, 1)."""
    p, _, _ = forward_cached(m, x)
    return p


def seeded_backward(m: ModelParams, acts: list[np.ndarray], seeds: np.ndarray) -> Gradient:
    """Gradient of ``sum_j seeds[j] * logit_j`` w.r.t. the parameters.

    Any scalar loss that reaches the parameters through the logits is
    differentiated by passing its per-row ``d(loss)/d(logit)`` as seeds.
    """
    delta = np.asarray(seeds, dtype=np.float64)[:, None]
    grads_w = [None] * m.n_layers
    grads_b = [None] * m.n_layers
    for l in range(m.n_layers - 1, -1, -1):
        a = acts[l]
        grads_w[l] = a.T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ m.weights[l].T) * (a > 0.0)
    return Gradient(weights=grads_w, biases=grads_b)


def backward(m: ModelParams, x: np.ndarray, loss_spec) -> tuple[float, Gradient]:
    """Mean-loss value and parameter gradient for one batch.

    ``loss_spec`` exposes ``value_and_seeds(p, z) -> (value, seeds)`` with
    seeds already scaled so the returned gradient is the gradient of the
    mean loss. Raises on a non-finite loss.
    """
    p, z, acts = forward_cached(m, x)
    value, seeds = loss_spec.value_and_seeds(p, z)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss value {value!r}")
    return float(value), seeded_backward(m, acts, seeds)


class CrossEntropyLoss:
    """Mean binary cross-entropy on the logistic output."""

    def __init__(self, y: np.ndarray):
        self.y = np.asarray(y, dtype=np.float64)

    def value_and_seeds(self, p: np.ndarray, z: np.ndarray):
        n = z.shape[0]
        # softplus(z) - y*z is the stable form of -[y log p + (1-y) log(1-p)]
        value = float(np.mean(np.logaddexp(0.0, z) - self.y * z))
        seeds = (_sigmoid(z) - self.y) / n
        return value, seeds


def apply_update(m: ModelParams, g: Gradient, lr: float) -> ModelParams:
    """Elementwise descent step: params minus lr times gradient."""
    if [w.shape for w in g.weights] != [w.shape for w in m.weights]:
        raise ShapeMismatchError("gradient shapes do not match parameters")
    return ModelParams(
        weights=[w - lr * gw for w, gw in zip(m.weights, g.weights)],
        biases=[b - lr * gb for b, gb in zip(m.biases, g.biases)],
    )


def grad_l2_norm(g: Gradient) -> float:
    """Euclidean norm over the flattened gradient."""
    return g.norm()


def per_example_clipped_sum(
    m: ModelParams, acts: list[np.ndarray], seeds: np.ndarray, clip_bound: float
) -> tuple[Gradient, np.ndarray]:
    """Per-row gradients (row j: ``seeds[j] * grad logit_j``), clipped, summed.

    Dispatches to the active kernel backend; returns the summed Gradient and
    each row's pre-clip norm.
    """
    out_w, out_b, norms = kernels.per_example_clipped_sum(
        m.weights, m.biases, acts, np.asarray(seeds, dtype=np.float64), float(clip_bound)
    )
    return Gradient(weights=list(out_w), biases=list(out_b)), norms


def save_checkpoint(m: ModelParams, path) -> None:
    """Write params: magic, int64 layer count, int64 dims, float64 values.

    All little-endian; value order is layer 0 weights (row-major), layer 0
    bias, layer 1 weights, ... Documented in the README.
    """
    with open(path, "wb") as fh:
        _write_checkpoint(m, fh)


def _write_checkpoint(m: ModelParams, fh: BinaryIO) -> None:
    dims = m.layer_dims
    fh.write(_CKPT_MAGIC)
    fh.write(struct.pack("<q", len(dims)))
    fh.write(struct.pack(f"<{len(dims)}q", *dims))
    fh.write(m.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint (bad magic {magic!r})")
        (n_dims,) = struct.unpack("<q", fh.read(8))
        dims = struct.unpack(f"<{n_dims}q", fh.read(8 * n_dims))
        n_values = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        raw = fh.read(8 * n_values)
        if len(raw) != 8 * n_values:
            raise ValueError(f"{path}: truncated checkpoint")
        flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    template = ModelParams(
        weights=[np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(b) for b in dims[1:]],
    )
    return template.with_flat(flat)

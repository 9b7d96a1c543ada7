"""Feed-forward binary classifier with analytic gradients over flat weight vectors.

Canonical flat order: for each layer (hidden layers first, then the 1-unit
head) the weight matrix of shape ``(fan_in, fan_out)`` in row-major order,
followed by its bias of length ``fan_out``.  Row ``i`` of a weight matrix holds
the outgoing weights of input unit ``i``.

Every reduction (dot products in the forward pass, sums over the batch and over
output units in the backward pass) runs through :func:`matmul_ascending`, a
compiled triple loop that adds terms in strictly ascending index order in
float64.  Results are therefore bit-identical across BLAS builds and thread
counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

ACTIVATIONS = ("relu", "tanh")
LOSSES = ("bce", "pretext")
BCE_EPS = 1e-12
# expit(+-35) stays strictly inside (0, 1) in float64
LOGIT_CLIP = 35.0


class ShapeError(ValueError):
    """Weights or batch do not match the architecture."""


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError(f"hidden_dims needs at least one positive entry, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, head included."""
        dims = [self.input_dim, *self.hidden_dims, 1]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return param_count(self)

    def to_dict(self) -> dict:
        return {
            "input_dim": int(self.input_dim),
            "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), tuple(d["hidden_dims"]), d.get("activation", "relu"))


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    auxiliary: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.auxiliary is None:
            self.auxiliary = np.zeros(len(self.labels))
        self.auxiliary = np.asarray(self.auxiliary, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        m = self.features.shape[0]
        if self.labels.shape != (m,) or self.auxiliary.shape != (m,):
            raise ShapeError(
                f"row counts disagree: features {m}, labels {self.labels.shape}, "
                f"auxiliary {self.auxiliary.shape}"
            )
        if not (np.isfinite(self.features).all() and np.isfinite(self.auxiliary).all()):
            raise ValueError("batch contains NaN or Inf")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.features[idx], self.labels[idx], self.auxiliary[idx])


def param_count(arch: Architecture) -> int:
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in arch.layer_shapes)


def flatten(arch: Architecture, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Pack ``[(W0, b0), (W1, b1), ...]`` into a float32 vector in canonical order."""
    shapes = arch.layer_shapes
    if len(layers) != len(shapes):
        raise ShapeError(f"expected {len(shapes)} layers, got {len(layers)}")
    parts = []
    for (fan_in, fan_out), (W, b) in zip(shapes, layers):
        W = np.asarray(W)
        b = np.asarray(b)
        if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ShapeError(
                f"layer shape mismatch: expected W{(fan_in, fan_out)} b{(fan_out,)}, "
                f"got W{W.shape} b{b.shape}"
            )
        parts.append(W.reshape(-1))
        parts.append(b)
    return np.concatenate(parts).astype(np.float32)


def unflatten(arch: Architecture, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Inverse of :func:`flatten`; keeps the dtype of ``w``."""
    w = np.asarray(w)
    check_weights(arch, w)
    layers = []
    pos = 0
    for fan_in, fan_out in arch.layer_shapes:
        W = w[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
        pos += fan_in * fan_out
        b = w[pos:pos + fan_out].copy()
        pos += fan_out
        layers.append((W, b))
    return layers


def check_weights(arch: Architecture, w: np.ndarray) -> None:
    n = param_count(arch)
    if w.ndim != 1 or w.shape[0] != n:
        raise ShapeError(f"weight vector has shape {w.shape}, architecture needs ({n},)")


def _check_inputs(arch, w, features):
    check_weights(arch, w)
    if features.ndim != 2 or features.shape[1] != arch.input_dim:
        raise ShapeError(f"features have shape {features.shape}, expected (M, {arch.input_dim})")


@njit(cache=True)
def _matmul_kernel(a, b):
    m_rows, inner = a.shape
    n_cols = b.shape[1]
    out = np.zeros((m_rows, n_cols))
    for m in range(m_rows):
        for k in range(inner):
            amk = a[m, k]
            for n in range(n_cols):
                out[m, n] += amk * b[k, n]
    return out


def matmul_ascending(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` in float64 with each dot product summed in ascending index order."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _matmul_kernel(a, b)


def sum_ascending(v: np.ndarray) -> float:
    return float(np.add.accumulate(np.asarray(v, dtype=np.float64).ravel())[-1])


def _dense(x, W, b):
    return matmul_ascending(x, W) + b


def _activate(arch, z):
    if arch.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(arch, z, h):
    if arch.activation == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - h * h


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_pass(arch, w, features):
    layers = unflatten(arch, np.asarray(w, dtype=np.float64))
    hs = [features]
    zs = []
    h = features
    for W, b in layers[:-1]:
        z = _dense(h, W, b)
        h = _activate(arch, z)
        zs.append(z)
        hs.append(h)
    W, b = layers[-1]
    logit = _dense(h, W, b)[:, 0]
    return layers, zs, hs, logit


def logits(arch: Architecture, w: np.ndarray, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    _check_inputs(arch, np.asarray(w), features)
    return _forward_pass(arch, w, features)[3]


def forward(arch: Architecture, w: np.ndarray, data) -> np.ndarray:
    """Positive-class probabilities for a :class:`Batch` or a raw feature matrix."""
    features = data.features if isinstance(data, Batch) else np.asarray(data, dtype=np.float64)
    z = logits(arch, w, features)
    return _sigmoid(np.clip(z, -LOGIT_CLIP, LOGIT_CLIP))


def loss_bce(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    if p.shape != y.shape:
        raise ShapeError(f"probabilities {p.shape} and labels {y.shape} differ")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    terms = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return sum_ascending(terms) / terms.size


def loss_mse(pred, target) -> float:
    r = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if r.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    return sum_ascending(r * r) / r.size


def loss(arch: Architecture, w: np.ndarray, batch: Batch, kind: str = "bce") -> float:
    """Mean loss of the network on ``batch``.

    ``bce`` scores the sigmoid output against the labels; ``pretext`` treats the
    head as a linear regressor of the auxiliary covariate under squared error.
    """
    if kind == "bce":
        return loss_bce(forward(arch, w, batch), batch.labels)
    if kind == "pretext":
        return loss_mse(logits(arch, w, batch.features), batch.auxiliary)
    raise ValueError(f"unknown loss {kind!r}, expected one of {LOSSES}")


def loss_and_gradient(arch: Architecture, w: np.ndarray, batch: Batch, kind: str = "bce"):
    """Mean loss and its exact gradient with respect to the flat weights (float64)."""
    if kind not in LOSSES:
        raise ValueError(f"unknown loss {kind!r}, expected one of {LOSSES}")
    _check_inputs(arch, np.asarray(w), batch.features)
    layers, zs, hs, logit = _forward_pass(arch, w, batch.features)
    m = len(batch)

    if kind == "bce":
        clipped = np.abs(logit) >= LOGIT_CLIP
        p = _sigmoid(np.clip(logit, -LOGIT_CLIP, LOGIT_CLIP))
        value = loss_bce(p, batch.labels)
        # the clamp inside loss_bce makes the loss flat there
        flat = (p <= BCE_EPS) | (p >= 1.0 - BCE_EPS) | clipped
        dz = np.where(flat, 0.0, p - batch.labels) / m
    else:
        value = loss_mse(logit, batch.auxiliary)
        dz = 2.0 * (logit - batch.auxiliary) / m
    delta = dz[:, None]
    ones = np.ones((1, m))

    grads = []
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW = matmul_ascending(hs[li].T, delta)
        gb = matmul_ascending(ones, delta)[0]
        grads.append(np.concatenate([gW.reshape(-1), gb]))
        if li == 0:
            break
        delta = matmul_ascending(delta, W.T) * _activation_grad(arch, zs[li - 1], hs[li])
    grads.reverse()
    return value, np.concatenate(grads)


def gradient(arch: Architecture, w: np.ndarray, batch: Batch, kind: str = "bce") -> np.ndarray:
    return loss_and_gradient(arch, w, batch, kind)[1]


def init_weights(arch: Architecture, rng: np.random.Generator) -> np.ndarray:
    """He (relu) or LeCun (tanh) normal weights, zero biases, as float32."""
    gain = 2.0 if arch.activation == "relu" else 1.0
    layers = []
    for fan_in, fan_out in arch.layer_shapes:
        W = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        layers.append((W, np.zeros(fan_out)))
    return flatten(arch, layers)


def head_slice(arch: Architecture) -> slice:
    """Flat-vector positions of the final head weights and bias."""
    fan_in, fan_out = arch.layer_shapes[-1]
    n = param_count(arch)
    return slice(n - (fan_in + 1) * fan_out, n)

"""A small float64 feed-forward engine: dense layers, dropout, backprop, SGD.

Rows of a 2-D input are independent instances pushed through the same
weights. Randomness comes only from :class:`numpy.random.Generator`
objects built on PCG64, so a seed fixes every stream on every platform.
In train mode each layer with a positive dropout rate draws
``rng.random((n_rows, out_dim))`` in layer order; the fast trainer in
:mod:`attnmil._kernels` consumes uniforms in exactly that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
ACTIVATION_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}

FORMAT_MAGIC = "attnmil-model"
FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Dimension or tape mismatch."""


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for a (seed, key...) cell, e.g. (master, repetition, fold)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sigmoid(z):
    # split by sign so neither branch overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "identity":
        return z.copy()
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``z`` (``a`` = activated value)."""
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray
    activation: str = "identity"
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.biases = np.array(self.biases, dtype=np.float64, ndmin=1)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("weights must be (out, in) and biases (out,)")
        if self.activation not in ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.biases]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation, self.dropout_rate)


@dataclass(eq=False)
class LayerStack:
    layers: list[DenseLayer]

    def __post_init__(self):
        self.layers = list(self.layers)
        if not self.layers:
            raise ShapeError("a stack needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def copy(self) -> "LayerStack":
        return LayerStack([layer.copy() for layer in self.layers])


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = glorot_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_layer(in_dim: int, out_dim: int, activation: str, dropout_rate: float,
               rng: np.random.Generator) -> DenseLayer:
    if in_dim < 1 or out_dim < 1:
        raise ShapeError(f"layer dimensions must be positive, got {in_dim}->{out_dim}")
    return DenseLayer(glorot_uniform(rng, out_dim, in_dim), np.zeros(out_dim), activation, dropout_rate)


def init_stack(dims: Sequence[int], activations: Sequence[str], dropout_rates: Sequence[float],
               rng: np.random.Generator) -> LayerStack:
    """Glorot-uniform weights and zero biases for ``dims[0] -> ... -> dims[-1]``."""
    n = len(dims) - 1
    if n < 1:
        raise ShapeError("need at least two dims (one layer)")
    if len(activations) != n or len(dropout_rates) != n:
        raise ShapeError(f"{n} layers need {n} activations and {n} dropout rates")
    if any(int(d) < 1 for d in dims):
        raise ShapeError(f"dimensions must be positive, got {list(dims)}")
    return LayerStack([
        init_layer(int(dims[i]), int(dims[i + 1]), activations[i], float(dropout_rates[i]), rng)
        for i in range(n)
    ])


@dataclass(eq=False)
class GradientTape:
    stack: LayerStack
    inputs: list[np.ndarray] = field(default_factory=list)   # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)      # affine outputs
    post: list[np.ndarray] = field(default_factory=list)     # activated, before dropout
    masks: list[np.ndarray | None] = field(default_factory=list)  # scaled keep masks
    squeeze: bool = False


def forward(stack: LayerStack, x: np.ndarray, mode: str = "infer",
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, GradientTape]:
    """Run ``x`` (vector or ``(n, in_dim)`` rows) through the stack.

    Train mode applies inverted dropout: units are zeroed with probability
    ``dropout_rate`` and survivors scaled by ``1 / (1 - dropout_rate)``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != stack.in_dim:
        raise ShapeError(f"input has shape {x.shape}, stack expects last dim {stack.in_dim}")
    tape = GradientTape(stack, squeeze=squeeze)
    for layer in stack.layers:
        tape.inputs.append(h)
        z = h @ layer.weights.T + layer.biases
        a = activate(layer.activation, z)
        tape.pre.append(z)
        tape.post.append(a)
        mask = None
        if mode == "train" and layer.dropout_rate > 0:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng")
            u = rng.random(a.shape)
            mask = (u >= layer.dropout_rate) / (1.0 - layer.dropout_rate)
            a = a * mask
        tape.masks.append(mask)
        h = a
    return (h[0] if squeeze else h), tape


@dataclass(eq=False)
class StackGrads:
    """Per-layer ``(d_weights, d_biases)`` plus the gradient w.r.t. the input."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    input: np.ndarray

    def flat(self) -> list[np.ndarray]:
        return [g for pair in self.layers for g in pair]


def backward(tape: GradientTape, grad_out: np.ndarray) -> StackGrads:
    """Reverse-mode gradients, replaying the dropout masks recorded in ``tape``."""
    g = np.asarray(grad_out, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    n_layers = len(tape.stack.layers)
    if len(tape.pre) != n_layers:
        raise ShapeError("tape does not match its stack")
    if g.shape != tape.post[-1].shape:
        raise ShapeError(f"upstream gradient has shape {g.shape}, expected {tape.post[-1].shape}")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        layer = tape.stack.layers[i]
        if tape.masks[i] is not None:
            g = g * tape.masks[i]
        dz = g * activation_grad(layer.activation, tape.pre[i], tape.post[i])
        grads[i] = (dz.T @ tape.inputs[i], dz.sum(axis=0))
        g = dz @ layer.weights
    return StackGrads(grads, g[0] if tape.squeeze else g)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             learning_rate: float) -> Sequence[np.ndarray]:
    """Plain SGD in place: ``p -= learning_rate * g``. Returns ``params``."""
    if not learning_rate > 0:
        raise ValueError("learning_rate must be positive")
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"parameter shape {p.shape} != gradient shape {np.shape(g)}")
    for p, g in zip(params, grads):
        p -= learning_rate * g
    return params


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple[int, tuple[int, ...]] | None  # (param index, entry index)
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(a, n):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)


def grad_check(loss: Callable[[], float], params: Sequence[np.ndarray],
               analytic: Sequence[np.ndarray], h: float = 1e-5,
               max_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss`` is re-evaluated after perturbing ``params`` in place, so it
    must read them live and be deterministic (dropout off or masks frozen).
    ``max_per_param`` samples that many entries per tensor.
    """
    an, nu, where = [], [], []
    for pi, (p, g) in enumerate(zip(params, analytic)):
        g = np.asarray(g)
        entries = list(np.ndindex(p.shape))
        if max_per_param is not None and len(entries) > max_per_param:
            pick = (rng or make_rng(0)).choice(len(entries), size=max_per_param, replace=False)
            entries = [entries[i] for i in sorted(pick)]
        for idx in entries:
            orig = p[idx]
            p[idx] = orig + h
            up = loss()
            p[idx] = orig - h
            down = loss()
            p[idx] = orig
            an.append(g[idx])
            nu.append((up - down) / (2.0 * h))
            where.append((pi, idx))
    an_arr, nu_arr = np.array(an), np.array(nu)
    if not an:
        return GradCheckReport(0.0, 0, None, an_arr, nu_arr)
    err = relative_error(an_arr, nu_arr)
    worst = int(np.argmax(err))
    return GradCheckReport(float(err[worst]), len(an), where[worst], an_arr, nu_arr)


# ---------------------------------------------------------------------------
# text persistence


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def describe_layer(layer: DenseLayer) -> str:
    return f"{layer.in_dim}x{layer.out_dim}:{layer.activation}:{_fmt(layer.dropout_rate)}"


def parse_layer_desc(desc: str) -> tuple[int, int, str, float]:
    dims, act, rate = desc.split(":")
    i, o = dims.split("x")
    return int(i), int(o), act, float(rate)


def dumps_model(header: Mapping[str, object], tensors: Mapping[str, np.ndarray]) -> str:
    """Serialize a header dict and named tensors to the versioned text format.

    Line 1: ``attnmil-model version=1 key=value ...``; then one line per
    tensor: ``name shape v0 v1 ...`` with shape like ``64x103``.
    """
    for k, v in header.items():
        if " " in f"{k}{v}" or "=" in str(k):
            raise ValueError(f"header entry {k}={v} must not contain spaces or '='")
    head = " ".join([FORMAT_MAGIC, f"version={FORMAT_VERSION}"] + [f"{k}={v}" for k, v in header.items()])
    lines = [head]
    for name, t in tensors.items():
        t = np.asarray(t, dtype=np.float64)
        shape = "x".join(str(s) for s in t.shape) if t.ndim else "scalar"
        lines.append(" ".join([name, shape, *map(_fmt, t.ravel())]))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty model file")
    head = lines[0].split()
    if head[0] != FORMAT_MAGIC:
        raise ValueError("not an attnmil model file")
    header = dict(item.split("=", 1) for item in head[1:])
    if int(header.pop("version")) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {header.get('version')}")
    tensors = {}
    for ln in lines[1:]:
        name, shape, *vals = ln.split()
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        arr = np.array([float(v) for v in vals], dtype=np.float64)
        if arr.size != int(np.prod(dims, dtype=np.int64)):
            raise ValueError(f"tensor {name} has {arr.size} values for shape {shape}")
        tensors[name] = arr.reshape(dims)
    return header, tensors

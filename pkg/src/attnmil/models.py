"""Bag classifiers: attention-pooling MIL, MI-Net (max/mean pooling) and MI-SVM."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from attnmil import _kernels
from attnmil.dataset import MAX_BAG_SIZE, Bag, Standardizer, pad_bag_duplicate
from attnmil.io import atomic_write_text
from attnmil.nncore import (
    ACTIVATION_CODES,
    DenseLayer,
    LayerStack,
    ShapeError,
    backward,
    describe_layer,
    dumps_model,
    forward,
    glorot_uniform,
    init_layer,
    init_stack,
    loads_model,
    make_rng,
    parse_layer_desc,
    sgd_step,
    sigmoid,
)

PROB_EPS = _kernels.PROB_EPS
THRESHOLD = 0.5
METHODS = ("attention_mil", "mi_net", "mi_svm")


class TrainingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    """Training settings; the defaults follow the published protocol where it states one."""

    learning_rate: float = 1e-4
    epochs: int = 500
    seed: int = 0
    oversample_count: int = 0
    pad_duplicate: bool = False
    standardize: bool = True
    hidden_dims: tuple[int, ...] = (64, 32)
    embed_dim: int = 32
    attention_dim: int = 16
    dropout_rate: float = 0.5
    minet_pooling: str = "max"
    svm_lambda: float = 0.01
    svm_inner_epochs: int = 200
    svm_outer_iters: int = 20
    engine: str = "fast"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.oversample_count < 0:
            raise ValueError("oversample_count must be >= 0")
        if self.embed_dim < 1 or self.attention_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer sizes must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.minet_pooling not in ("max", "mean"):
            raise ValueError("minet_pooling must be 'max' or 'mean'")
        if not self.svm_lambda > 0 or self.svm_inner_epochs < 1 or self.svm_outer_iters < 1:
            raise ValueError("invalid MI-SVM settings")
        if self.engine not in ("fast", "reference"):
            raise ValueError("engine must be 'fast' or 'reference'")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def transform_spec(self, feature_dim: int):
        dims = [feature_dim, *self.hidden_dims, self.embed_dim]
        n = len(dims) - 1
        acts = ["relu"] * (n - 1) + ["identity"]
        rates = [self.dropout_rate] * (n - 1) + [0.0]
        return dims, acts, rates


# ---------------------------------------------------------------------------
# attention pooling


@dataclass(eq=False)
class AttentionParams:
    V: np.ndarray  # (L, M)
    w: np.ndarray  # (L,)

    def __post_init__(self):
        self.V = np.array(self.V, dtype=np.float64, ndmin=2)
        self.w = np.array(self.w, dtype=np.float64, ndmin=1)
        if self.w.shape != (self.V.shape[0],):
            raise ShapeError("attention w must have length L for V of shape (L, M)")

    def parameters(self) -> list[np.ndarray]:
        return [self.V, self.w]


def _attention_forward(H: np.ndarray, att: AttentionParams):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ShapeError("attention pooling needs at least one instance embedding")
    if H.shape[1] != att.V.shape[1]:
        raise ShapeError(f"embeddings have dim {H.shape[1]}, attention expects {att.V.shape[1]}")
    T = np.tanh(H @ att.V.T)
    scores = T @ att.w
    e = np.exp(scores - scores.max())
    alpha = e / e.sum()
    return alpha @ H, alpha, T


def attention_pool(embeddings: np.ndarray, attention: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """``alpha = softmax_k(w . tanh(V h_k))``; returns ``(sum_k alpha_k h_k, alpha)``."""
    z, alpha, _ = _attention_forward(embeddings, attention)
    return z, alpha


def _attention_backward(H, att, alpha, T, dz):
    dalpha = H @ dz
    ds = alpha * (dalpha - alpha @ dalpha)
    C = ds[:, None] * att.w[None, :] * (1.0 - T * T)  # (K, L)
    dH = alpha[:, None] * dz[None, :] + C @ att.V
    return dH, C.T @ H, T.T @ ds


# ---------------------------------------------------------------------------
# models


@dataclass
class AttentionReport:
    """Per-instance attention weights of one bag; only comparable within that bag."""

    bag_id: str
    weights: np.ndarray
    is_padding: np.ndarray

    def collapsed(self, original_size: int | None = None) -> np.ndarray:
        """Fold duplicate padding slots back onto their source instance."""
        n = original_size if original_size is not None else int((~self.is_padding).sum())
        out = np.zeros(n)
        np.add.at(out, np.arange(self.weights.shape[0]) % n, self.weights)
        return out

    def rows(self) -> list[list[str]]:
        return [[self.bag_id, str(i), format(float(a), ".17g"), str(int(p))]
                for i, (a, p) in enumerate(zip(self.weights, self.is_padding))]


@dataclass(eq=False)
class _NetTape:
    x: np.ndarray
    stack_tape: object
    H: np.ndarray
    z: np.ndarray
    p: float
    alpha: np.ndarray | None = None
    T: np.ndarray | None = None
    argmax: np.ndarray | None = None


@dataclass(eq=False)
class _BagNetwork:
    """Shared pieces of the two neural bag classifiers."""

    transform: LayerStack
    head: DenseLayer

    @property
    def feature_dim(self) -> int:
        return self.transform.in_dim

    def _check(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[0] == 0:
            raise ShapeError("bag must contain at least one instance")
        if x.shape[1] != self.feature_dim:
            raise ShapeError(f"bag has feature dim {x.shape[1]}, model expects {self.feature_dim}")

    def _head(self, z):
        logit = float(self.head.weights[0] @ z + self.head.biases[0])
        return float(sigmoid(np.array([logit]))[0])

    def _head_backward(self, tape: _NetTape, dp: float):
        dlogit = dp * tape.p * (1.0 - tape.p)
        return dlogit * tape.z[None, :], np.array([dlogit]), dlogit * self.head.weights[0]


@dataclass(eq=False)
class AttentionMilModel(_BagNetwork):
    attention: AttentionParams = None  # type: ignore[assignment]
    kind = "attention_mil"

    def __post_init__(self):
        m = self.transform.out_dim
        if self.attention.V.shape[1] != m or self.head.in_dim != m or self.head.out_dim != 1:
            raise ShapeError("transform, attention and head dimensions do not chain")

    def parameters(self) -> list[np.ndarray]:
        return [*self.transform.parameters(), *self.attention.parameters(), *self.head.parameters()]

    def forward_array(self, x, mode="infer", rng=None):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        H, st = forward(self.transform, x, mode, rng)
        z, alpha, T = _attention_forward(H, self.attention)
        p = self._head(z)
        return p, _NetTape(x, st, H, z, p, alpha=alpha, T=T)

    def backward_array(self, tape: _NetTape, dp: float) -> list[np.ndarray]:
        dW, db, dz = self._head_backward(tape, dp)
        dH, dV, dw = _attention_backward(tape.H, self.attention, tape.alpha, tape.T, dz)
        sg = backward(tape.stack_tape, dH)
        return [*sg.flat(), dV, dw, dW, db]

    def copy(self) -> "AttentionMilModel":
        return AttentionMilModel(self.transform.copy(), self.head.copy(),
                                 AttentionParams(self.attention.V.copy(), self.attention.w.copy()))


@dataclass(eq=False)
class MiNetModel(_BagNetwork):
    pooling: str = "max"
    kind = "mi_net"

    def __post_init__(self):
        if self.pooling not in ("max", "mean"):
            raise ValueError("pooling must be 'max' or 'mean'")
        if self.head.in_dim != self.transform.out_dim or self.head.out_dim != 1:
            raise ShapeError("transform and head dimensions do not chain")

    def parameters(self) -> list[np.ndarray]:
        return [*self.transform.parameters(), *self.head.parameters()]

    def forward_array(self, x, mode="infer", rng=None):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        H, st = forward(self.transform, x, mode, rng)
        if self.pooling == "max":
            arg = np.argmax(H, axis=0)
            z = H[arg, np.arange(H.shape[1])]
        else:
            arg = None
            z = H.mean(axis=0)
        p = self._head(z)
        return p, _NetTape(x, st, H, z, p, argmax=arg)

    def backward_array(self, tape: _NetTape, dp: float) -> list[np.ndarray]:
        dW, db, dz = self._head_backward(tape, dp)
        K, m = tape.H.shape
        if self.pooling == "max":
            dH = np.zeros((K, m))
            dH[tape.argmax, np.arange(m)] = dz
        else:
            dH = np.tile(dz / K, (K, 1))
        sg = backward(tape.stack_tape, dH)
        return [*sg.flat(), dW, db]

    def copy(self) -> "MiNetModel":
        return MiNetModel(self.transform.copy(), self.head.copy(), self.pooling)


@dataclass(eq=False)
class MiSvmModel:
    weights: np.ndarray
    bias: float
    lam: float = 0.01
    kind = "mi_svm"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=1)
        self.bias = float(self.bias)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("MI-SVM parameters must be finite")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    def decision(self, x: np.ndarray) -> np.ndarray:
        # row-wise reduction so a bag's score never depends on its other rows
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x * self.weights).sum(axis=1) + self.bias


def init_attention_model(feature_dim: int, config: TrainConfig, rng: np.random.Generator) -> AttentionMilModel:
    dims, acts, rates = config.transform_spec(feature_dim)
    transform = init_stack(dims, acts, rates, rng)
    V = glorot_uniform(rng, config.attention_dim, config.embed_dim)
    w = glorot_uniform(rng, 1, config.attention_dim)[0]
    head = init_layer(config.embed_dim, 1, "sigmoid", 0.0, rng)
    return AttentionMilModel(transform, head, AttentionParams(V, w))


def init_minet_model(feature_dim: int, config: TrainConfig, rng: np.random.Generator) -> MiNetModel:
    dims, acts, rates = config.transform_spec(feature_dim)
    transform = init_stack(dims, acts, rates, rng)
    head = init_layer(config.embed_dim, 1, "sigmoid", 0.0, rng)
    return MiNetModel(transform, head, config.minet_pooling)


# ---------------------------------------------------------------------------
# forward / loss / predict


def _bag_array(bag) -> np.ndarray:
    x = bag.instances if isinstance(bag, Bag) else np.asarray(bag, dtype=np.float64)
    return x


def attn_mil_forward(model: AttentionMilModel, bag: Bag, mode: str = "infer",
                     rng: np.random.Generator | None = None):
    """Bag probability, attention report and tape for :func:`attn_mil_backward`."""
    p, tape = model.forward_array(_bag_array(bag), mode, rng)
    report = AttentionReport(bag.bag_id, tape.alpha.copy(), bag.is_padding().copy())
    return p, report, tape


def attn_mil_backward(model: AttentionMilModel, tape: _NetTape, dp: float) -> list[np.ndarray]:
    """Gradients aligned with ``model.parameters()``."""
    return model.backward_array(tape, dp)


def minet_forward(transform: LayerStack, head: DenseLayer, bag: Bag, pooling: str = "max",
                  mode: str = "infer", rng: np.random.Generator | None = None) -> float:
    p, _ = MiNetModel(transform, head, pooling).forward_array(_bag_array(bag), mode, rng)
    return p


def bce_loss(probability: float, label: int) -> tuple[float, float]:
    """Binary cross-entropy on a clamped probability and its derivative in ``probability``."""
    p = min(max(float(probability), PROB_EPS), 1.0 - PROB_EPS)
    y = float(label)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(loss), -y / p + (1.0 - y) / (1.0 - p)


def predict_bag(model, bag: Bag):
    """Infer-mode probability, thresholded label (``p >= 0.5``) and attention report (or None)."""
    if isinstance(model, MiSvmModel):
        raise TypeError("use misvm_score for MI-SVM models")
    if isinstance(model, AttentionMilModel):
        p, report, _ = attn_mil_forward(model, bag)
    else:
        p, _ = model.forward_array(_bag_array(bag))
        report = None
    return p, int(p >= THRESHOLD), report


def misvm_score(model: MiSvmModel, bag: Bag) -> tuple[float, int]:
    """Bag score is the maximum instance decision value; label 1 iff score >= 0."""
    x = _bag_array(bag)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError("bag must contain at least one instance")
    if x.shape[1] != model.feature_dim:
        raise ShapeError(f"bag has feature dim {x.shape[1]}, model expects {model.feature_dim}")
    score = float(np.max(model.decision(x)))
    return score, int(score >= 0.0)


def score_bag(model, bag: Bag):
    """Uniform scoring for evaluation: ``(ranking score, label, report or None)``."""
    if isinstance(model, MiSvmModel):
        s, label = misvm_score(model, bag)
        return s, label, None
    return predict_bag(model, bag)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingLog:
    epoch_loss: list[float] = field(default_factory=list)


def _check_classes(bags: Sequence[Bag]):
    labels = {b.label for b in bags}
    if 1 not in labels:
        raise TrainingError("training set has no positive bags (label 1)")
    if 0 not in labels:
        raise TrainingError("training set has no negative bags (label 0)")


def pad_target(bags: Sequence[Bag]) -> int:
    return max(MAX_BAG_SIZE, max(b.size for b in bags))


def prepare_bags(bags: Sequence[Bag], config: TrainConfig, target: int | None = None) -> list[Bag]:
    if not config.pad_duplicate:
        return list(bags)
    target = target or pad_target(bags)
    return [pad_bag_duplicate(b, target) for b in bags]


def _pack(model: _BagNetwork):
    """Flatten parameters into one vector plus the offset tables the kernel reads."""
    params = model.parameters()
    sizes = [p.size for p in params]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    flat = np.concatenate([p.ravel() for p in params])
    layers = model.transform.layers
    n = len(layers)
    tables = dict(
        layer_in=np.array([l.in_dim for l in layers], dtype=np.int64),
        layer_out=np.array([l.out_dim for l in layers], dtype=np.int64),
        layer_act=np.array([ACTIVATION_CODES[l.activation] for l in layers], dtype=np.int64),
        layer_rate=np.array([l.dropout_rate for l in layers], dtype=np.float64),
        w_off=offs[0:2 * n:2].copy(),
        b_off=offs[1:2 * n:2].copy(),
    )
    if isinstance(model, AttentionMilModel):
        tables.update(pool_kind=_kernels.POOL_ATTENTION, att_dim=model.attention.V.shape[0],
                      v_off=int(offs[2 * n]), wv_off=int(offs[2 * n + 1]),
                      hw_off=int(offs[2 * n + 2]), hb_off=int(offs[2 * n + 3]))
    else:
        pool = _kernels.POOL_MAX if model.pooling == "max" else _kernels.POOL_MEAN
        tables.update(pool_kind=pool, att_dim=1, v_off=0, wv_off=0,
                      hw_off=int(offs[2 * n]), hb_off=int(offs[2 * n + 1]))
    return flat, offs, tables


def _unpack(model: _BagNetwork, flat: np.ndarray, offs: np.ndarray):
    for i, p in enumerate(model.parameters()):
        p[...] = flat[offs[i]:offs[i + 1]].reshape(p.shape)


def _dropout_units(model: _BagNetwork) -> int:
    return sum(l.out_dim for l in model.transform.layers if l.dropout_rate > 0)


def _train_reference(model, bags, config, rng, log):
    params = model.parameters()
    for _ in range(config.epochs):
        order = rng.permutation(len(bags))
        total = 0.0
        for i in order:
            bag = bags[i]
            p, tape = model.forward_array(bag.instances, "train", rng)
            loss, dp = bce_loss(p, bag.label)
            grads = model.backward_array(tape, dp)
            sgd_step(params, grads, config.learning_rate)
            total += loss
        log.epoch_loss.append(total / len(bags))


def _train_fast(model, bags, config, rng, log):
    flat, offs, t = _pack(model)
    grads = np.zeros_like(flat)
    X = np.ascontiguousarray(np.vstack([b.instances for b in bags]))
    lens = np.array([b.size for b in bags], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64)
    labels = np.array([b.label for b in bags], dtype=np.float64)
    units = _dropout_units(model)
    n_uniform = int(lens.sum()) * units
    for _ in range(config.epochs):
        order = rng.permutation(len(bags)).astype(np.int64)
        U = rng.random(n_uniform) if n_uniform else np.zeros(0)
        total = _kernels.train_network_epoch(
            flat, grads, t["layer_in"], t["layer_out"], t["layer_act"], t["layer_rate"],
            t["w_off"], t["b_off"], t["pool_kind"], t["att_dim"], t["v_off"], t["wv_off"],
            t["hw_off"], t["hb_off"], X, starts, lens, labels, order, U, config.learning_rate)
        log.epoch_loss.append(total / len(bags))
    if not np.all(np.isfinite(flat)):
        raise TrainingError("training diverged to non-finite parameters")
    _unpack(model, flat, offs)


def train_network(model: _BagNetwork, train_bags: Sequence[Bag], config: TrainConfig,
                  rng: np.random.Generator) -> TrainingLog:
    """Batch-size-1 SGD with BCE loss; one shuffled pass over the bags per epoch.

    Updates ``model`` in place. Both engines draw the epoch permutation,
    then each step's dropout uniforms, from ``rng`` in the same order.
    """
    _check_classes(train_bags)
    bags = prepare_bags(train_bags, config)
    for b in bags:
        if b.dim != model.feature_dim:
            raise ShapeError(f"bag {b.bag_id!r} has dim {b.dim}, model expects {model.feature_dim}")
    log = TrainingLog()
    if config.engine == "fast":
        _train_fast(model, bags, config, rng, log)
    else:
        _train_reference(model, bags, config, rng, log)
    return log


def train_attention_mil(train_bags: Sequence[Bag], config: TrainConfig,
                        rng: np.random.Generator | None = None):
    _check_classes(train_bags)
    rng = rng if rng is not None else make_rng(config.seed)
    model = init_attention_model(train_bags[0].dim, config, rng)
    log = train_network(model, train_bags, config, rng)
    return model, log


def train_minet(train_bags: Sequence[Bag], config: TrainConfig,
                rng: np.random.Generator | None = None):
    _check_classes(train_bags)
    rng = rng if rng is not None else make_rng(config.seed)
    model = init_minet_model(train_bags[0].dim, config, rng)
    log = train_network(model, train_bags, config, rng)
    return model, log


def train_misvm(train_bags: Sequence[Bag], lam: float = 0.01, max_outer_iters: int = 20,
                rng: np.random.Generator | None = None, inner_epochs: int = 200) -> MiSvmModel:
    """MI-SVM witness alternation around a sub-gradient linear SVM.

    Positive bags start from their instance mean; afterwards each is
    represented by its highest-scoring instance. Stops when the
    representatives no longer change or after ``max_outer_iters`` refits.
    """
    _check_classes(train_bags)
    rng = rng if rng is not None else make_rng(0)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    pos = [b.instances for b in train_bags if b.label == 1]
    neg = np.vstack([b.instances for b in train_bags if b.label == 0])
    d = neg.shape[1]
    reps = np.vstack([x.mean(axis=0) for x in pos])
    model = MiSvmModel(np.zeros(d), 0.0, lam)
    t0 = 1.0 / lam
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    for _ in range(max_outer_iters):
        X = np.ascontiguousarray(np.vstack([reps, neg]))
        orders = np.vstack([rng.permutation(len(y)) for _ in range(inner_epochs)]).astype(np.int64)
        w, b = _kernels.pegasos_fit(X, y, lam, orders, t0)
        model = MiSvmModel(w, b, lam)
        new_reps = np.vstack([x[int(np.argmax(model.decision(x)))] for x in pos])
        if np.array_equal(new_reps, reps):
            break
        reps = new_reps
    return model


def train_model(method: str, train_bags: Sequence[Bag], config: TrainConfig,
                rng: np.random.Generator | None = None):
    """Dispatch on method name; returns the fitted model."""
    if method == "attention_mil":
        return train_attention_mil(train_bags, config, rng)[0]
    if method == "mi_net":
        return train_minet(train_bags, config, rng)[0]
    if method == "mi_svm":
        return train_misvm(train_bags, config.svm_lambda, config.svm_outer_iters, rng,
                           config.svm_inner_epochs)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------------------
# persistence


def model_to_text(model, standardizer: Standardizer | None = None, pad_size: int | None = None) -> str:
    header: dict[str, object] = {"kind": model.kind, "feature_dim": model.feature_dim}
    tensors: dict[str, np.ndarray] = {}
    if isinstance(model, MiSvmModel):
        header["lambda"] = format(model.lam, ".17g")
        tensors["svm.weight"] = model.weights
        tensors["svm.bias"] = np.array([model.bias])
    else:
        header["layers"] = ",".join(describe_layer(l) for l in model.transform.layers)
        header["head"] = describe_layer(model.head)
        for i, layer in enumerate(model.transform.layers):
            tensors[f"transform.{i}.weight"] = layer.weights
            tensors[f"transform.{i}.bias"] = layer.biases
        if isinstance(model, AttentionMilModel):
            header["attention"] = "x".join(map(str, model.attention.V.shape))
            tensors["attention.V"] = model.attention.V
            tensors["attention.w"] = model.attention.w
        else:
            header["pooling"] = model.pooling
        tensors["head.weight"] = model.head.weights
        tensors["head.bias"] = model.head.biases
    if pad_size is not None:
        header["pad_size"] = pad_size
    if standardizer is not None:
        header["standardized"] = 1
        tensors["standardizer.means"] = standardizer.means
        tensors["standardizer.stds"] = standardizer.stds
    return dumps_model(header, tensors)


def model_from_text(text: str):
    """Inverse of :func:`model_to_text`: ``(model, standardizer or None, header)``."""
    header, t = loads_model(text)
    kind = header["kind"]
    if kind == "mi_svm":
        model = MiSvmModel(t["svm.weight"], float(t["svm.bias"][0]), float(header["lambda"]))
    elif kind in ("attention_mil", "mi_net"):
        layers = []
        for i, desc in enumerate(header["layers"].split(",")):
            _, _, act, rate = parse_layer_desc(desc)
            layers.append(DenseLayer(t[f"transform.{i}.weight"], t[f"transform.{i}.bias"], act, rate))
        _, _, hact, hrate = parse_layer_desc(header["head"])
        head = DenseLayer(t["head.weight"], t["head.bias"], hact, hrate)
        if kind == "attention_mil":
            model = AttentionMilModel(LayerStack(layers), head,
                                      AttentionParams(t["attention.V"], t["attention.w"]))
        else:
            model = MiNetModel(LayerStack(layers), head, header["pooling"])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    if model.feature_dim != int(header["feature_dim"]):
        raise ValueError("model file feature_dim does not match its tensors")
    std = None
    if "standardizer.means" in t:
        std = Standardizer(t["standardizer.means"], t["standardizer.stds"])
    return model, std, header


def save_model(path: str | os.PathLike, model, standardizer: Standardizer | None = None,
               pad_size: int | None = None) -> None:
    atomic_write_text(path, model_to_text(model, standardizer, pad_size))


def load_model(path: str | os.PathLike):
    return model_from_text(Path(path).read_text(encoding="utf-8"))

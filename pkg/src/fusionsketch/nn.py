"""Dense modality networks, joint head and the two-step trainer.

Each modality has a small dense stack ending in its embedding layer. The
embeddings are fused by a :class:`~fusionsketch.fusion.FusionLayer`, passed
through a ReLU joint representation layer and a softmax classifier.

Arrays are batch-major: every modality input is ``(n, input_dim)``. A list
of 1-D vectors is accepted as a batch of one.
"""
import hashlib
from dataclasses import dataclass, field

import numpy as np

from ._random import generator
from .exceptions import DimensionError
from .fusion import FusionLayer

__all__ = [
    "DenseLayer",
    "ModalityNetwork",
    "JointHead",
    "TrainConfig",
    "EpochMetrics",
    "build_model",
    "forward",
    "backward",
    "head_forward",
    "head_backward",
    "predict_proba",
    "parameters",
    "network_checksum",
    "train_two_step",
]

ACTIVATIONS = ("relu", "identity")


@dataclass(eq=False)
class DenseLayer:
    """Fully connected layer ``act(x @ weights.T + bias)``."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    @classmethod
    def he_uniform(cls, in_dim, out_dim, activation, rng, dtype=np.float64):
        limit = np.sqrt(6.0 / in_dim)
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)
        return cls(w, np.zeros(out_dim, dtype=dtype), activation)

    def forward(self, x):
        pre = x @ self.weights.T + self.bias
        out = np.maximum(pre, 0) if self.activation == "relu" else pre
        return out, pre

    def backward(self, grad_out, x, pre):
        """Returns ``(grad_x, grad_weights, grad_bias)``."""
        g = grad_out * (pre > 0) if self.activation == "relu" else grad_out
        return g @ self.weights, g.T @ x, g.sum(axis=0)

    def astype(self, dtype):
        return DenseLayer(self.weights.astype(dtype), self.bias.astype(dtype), self.activation)


@dataclass(eq=False)
class ModalityNetwork:
    """Dense stand-in for a modality-dedicated CNN; the last layer is the embedding."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a modality network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(f"layer output {a.out_dim} does not feed input {b.in_dim}")

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def embedding_dim(self):
        return self.layers[-1].out_dim

    @classmethod
    def build(cls, input_dim, embedding_dim=1024, hidden_dims=(), rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng()
        dims = [input_dim, *hidden_dims, embedding_dim]
        return cls([DenseLayer.he_uniform(a, b, "relu", rng, dtype) for a, b in zip(dims, dims[1:])])

    def forward(self, x):
        cache = []
        for layer in self.layers:
            out, pre = layer.forward(x)
            cache.append((x, pre))
            x = out
        return x, cache

    def backward(self, grad, cache):
        grads = []
        for layer, (x, pre) in zip(reversed(self.layers), reversed(cache)):
            grad, gw, gb = layer.backward(grad, x, pre)
            grads.append((gw, gb))
        return grad, grads[::-1]


@dataclass(eq=False)
class JointHead:
    """Fusion, joint representation layer and linear classifier (softmax applied outside).

    With ``normalize_embeddings`` each embedding is scaled to unit L2 norm
    before fusion. Sketch segments scale with the product of their input
    norms, so without it a three-way sketch dwarfs the single-modality
    segments and plain SGD diverges.
    """

    fusion: FusionLayer
    joint_layer: DenseLayer
    classifier: DenseLayer
    normalize_embeddings: bool = True

    def __post_init__(self):
        if self.joint_layer.in_dim != self.fusion.output_dim:
            raise DimensionError(
                f"joint layer expects {self.joint_layer.in_dim} inputs, fusion gives "
                f"{self.fusion.output_dim}"
            )
        if self.classifier.in_dim != self.joint_layer.out_dim:
            raise DimensionError("classifier input does not match joint layer output")
        if self.classifier.activation != "identity":
            raise ValueError("classifier layer must use the identity activation")

    @property
    def num_classes(self):
        return self.classifier.out_dim


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of :func:`train_two_step`.

    ``learning_rate`` drives stage 1 (frozen modality networks) and
    ``learning_rate_stage2`` the joint stage. Gradients are averaged over
    each mini-batch.
    """

    learning_rate: float = 0.01
    learning_rate_stage2: float = 0.001
    epochs_stage1: int = 5
    epochs_stage2: int = 5
    batch_size: int = 32
    optimizer: str = "sgd-momentum"
    momentum: float = 0.9
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        for name in ("learning_rate", "learning_rate_stage2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("epochs_stage1", "epochs_stage2"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "sgd-momentum"):
            raise ValueError(f"optimizer must be 'sgd' or 'sgd-momentum', got {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.precision not in ("double", "single"):
            raise ValueError(f"precision must be 'double' or 'single', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32


@dataclass(frozen=True)
class EpochMetrics:
    stage: int
    epoch: int
    loss: float
    accuracy: float


def build_model(
    input_dims,
    num_classes,
    fusion_spec,
    embedding_dim=1024,
    hidden_dims=(),
    joint_dim=1024,
    seed=0,
    dtype=np.float64,
    fusion_params=None,
    normalize_embeddings=True,
):
    """Randomly initialised modality networks and joint head."""
    networks = [
        ModalityNetwork.build(c, embedding_dim, hidden_dims, generator(seed, "modality", i), dtype)
        for i, c in enumerate(input_dims)
    ]
    fusion = FusionLayer(fusion_spec, [embedding_dim] * len(input_dims), fusion_params)
    rng = generator(seed, "head")
    head = JointHead(
        fusion,
        DenseLayer.he_uniform(fusion.output_dim, joint_dim, "relu", rng, dtype),
        DenseLayer.he_uniform(joint_dim, num_classes, "identity", rng, dtype),
        normalize_embeddings,
    )
    return networks, head


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _prepare(networks, xs, dtype):
    if len(xs) != len(networks):
        raise DimensionError(f"expected {len(networks)} modalities, got {len(xs)}")
    arrs = [np.asarray(x, dtype=dtype) for x in xs]
    single = all(a.ndim == 1 for a in arrs)
    if single:
        arrs = [a[None, :] for a in arrs]
    for i, (a, net) in enumerate(zip(arrs, networks)):
        if a.ndim != 2 or a.shape[1] != net.input_dim:
            raise DimensionError(
                f"modality {i}: expected shape (n, {net.input_dim}), got {np.shape(xs[i])}"
            )
    if len({a.shape[0] for a in arrs}) != 1:
        raise DimensionError("modalities have different numbers of samples")
    return arrs, single


_NORM_EPS = 1e-12


def _l2_normalize(e):
    r = np.sqrt((e * e).sum(axis=-1, keepdims=True) + _NORM_EPS)
    return e / r, r


def head_forward(head, embeddings):
    if head.normalize_embeddings:
        normed = [_l2_normalize(e) for e in embeddings]
        fusion_in = [u for u, _ in normed]
        norms = [r for _, r in normed]
    else:
        fusion_in, norms = list(embeddings), None
    fused = head.fusion.forward(fusion_in)
    joint, joint_pre = head.joint_layer.forward(fused)
    logits, _ = head.classifier.forward(joint)
    probs = _softmax(logits)
    return probs, {"embeddings": embeddings, "fusion_in": fusion_in, "norms": norms, "fused": fused, "joint": joint, "joint_pre": joint_pre, "logits": logits, "probs": probs}


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def head_backward(head, cache, labels, embedding_grads=True):
    """Mean cross-entropy loss, head parameter gradients and embedding gradients.

    With ``embedding_grads=False`` the fusion adjoint is skipped and ``None``
    is returned in its place.
    """
    probs = cache["probs"]
    n = probs.shape[0]
    labels = _check_labels(labels, n, head.num_classes)
    rows = np.arange(n)
    logits = cache["logits"]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[rows, labels].mean())

    dlogits = probs.copy()
    dlogits[rows, labels] -= 1
    dlogits /= n
    djoint, gw_c, gb_c = head.classifier.backward(dlogits, cache["joint"], cache["logits"])
    dfused, gw_j, gb_j = head.joint_layer.backward(djoint, cache["fused"], cache["joint_pre"])
    demb = None
    if embedding_grads:
        demb = head.fusion.backward(dfused, cache["fusion_in"])
        if head.normalize_embeddings:
            # d(e / r) with r = sqrt(|e|^2 + eps): (g - u (u.g)) / r
            demb = [
                (g - u * (u * g).sum(axis=-1, keepdims=True)) / r
                for g, u, r in zip(demb, cache["fusion_in"], cache["norms"])
            ]
    grads = {
        "joint.weights": gw_j,
        "joint.bias": gb_j,
        "classifier.weights": gw_c,
        "classifier.bias": gb_c,
    }
    return loss, grads, demb


def forward(networks, head, xs):
    """Class probabilities and a cache for :func:`backward`.

    Returns probabilities of shape ``(n, num_classes)``, or
    ``(num_classes,)`` when every input is a single 1-D vector.
    """
    dtype = head.classifier.weights.dtype
    arrs, single = _prepare(networks, xs, dtype)
    embs, net_caches = [], []
    for net, x in zip(networks, arrs):
        e, c = net.forward(x)
        embs.append(e)
        net_caches.append(c)
    probs, cache = head_forward(head, embs)
    cache["networks"] = net_caches
    cache["single"] = single
    return (probs[0] if single else probs), cache


def backward(networks, head, cache, labels):
    """Loss and gradients of every parameter (keys as in :func:`parameters`).

    Embedding gradients are returned under ``"embedding{i}"``.
    """
    labels = np.atleast_1d(np.asarray(labels))
    loss, grads, demb = head_backward(head, cache, labels)
    for i, (net, c, g) in enumerate(zip(networks, cache["networks"], demb)):
        grads[f"embedding{i}"] = g
        _, layer_grads = net.backward(g, c)
        for j, (gw, gb) in enumerate(layer_grads):
            grads[f"modality{i}.layer{j}.weights"] = gw
            grads[f"modality{i}.layer{j}.bias"] = gb
    return loss, grads


def predict_proba(networks, head, xs):
    return forward(networks, head, xs)[0]


def _network_parameters(networks):
    out = {}
    for i, net in enumerate(networks):
        for j, layer in enumerate(net.layers):
            out[f"modality{i}.layer{j}.weights"] = layer.weights
            out[f"modality{i}.layer{j}.bias"] = layer.bias
    return out


def _head_parameters(head):
    return {
        "joint.weights": head.joint_layer.weights,
        "joint.bias": head.joint_layer.bias,
        "classifier.weights": head.classifier.weights,
        "classifier.bias": head.classifier.bias,
    }


def parameters(networks, head):
    """Every trainable array by name, in a fixed order. Values are live views."""
    return {**_network_parameters(networks), **_head_parameters(head)}


def network_checksum(networks):
    h = hashlib.sha256()
    for name, arr in _network_parameters(networks).items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class _SGD:
    params: dict
    lr: float
    momentum: float
    velocity: dict = field(default_factory=dict)

    def step(self, grads):
        for name, p in self.params.items():
            g = grads[name]
            if self.momentum:
                v = self.velocity.get(name)
                v = -self.lr * g if v is None else self.momentum * v - self.lr * g
                self.velocity[name] = v
                p += v.astype(p.dtype, copy=False)
            else:
                p -= (self.lr * g).astype(p.dtype, copy=False)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_two_step(networks, head, X, y, cfg, log=None):
    """Train in place with the two-step schedule; returns per-epoch metrics.

    Stage 1 keeps the modality networks frozen and fits the head on their
    (fixed) embeddings. Stage 2 updates every parameter jointly.

    Parameters
    ----------
    X : list of ndarray
        One ``(n, input_dim)`` array per modality.
    y : ndarray of int, shape (n,)
        Class indices.
    log : callable, optional
        Called with each :class:`EpochMetrics` as it is produced.
    """
    dtype = cfg.dtype
    arrs, _ = _prepare(networks, X, dtype)
    n = arrs[0].shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    y = _check_labels(y, n, head.num_classes)
    rng = generator(cfg.seed, "shuffle")
    momentum = cfg.momentum if cfg.optimizer == "sgd-momentum" else 0.0
    history = []

    def record(stage, epoch, loss_sum, correct):
        m = EpochMetrics(stage, epoch, loss_sum / n, correct / n)
        history.append(m)
        if log is not None:
            log(m)

    if cfg.epochs_stage1:
        embs = [net.forward(x)[0] for net, x in zip(networks, arrs)]
        opt = _SGD(_head_parameters(head), cfg.learning_rate, momentum)
        for epoch in range(cfg.epochs_stage1):
            loss_sum = correct = 0.0
            for idx in _batches(n, cfg.batch_size, rng):
                probs, cache = head_forward(head, [e[idx] for e in embs])
                loss, grads, _ = head_backward(head, cache, y[idx], embedding_grads=False)
                opt.step(grads)
                loss_sum += loss * len(idx)
                correct += int((probs.argmax(axis=1) == y[idx]).sum())
            record(1, epoch, loss_sum, correct)

    if cfg.epochs_stage2:
        opt = _SGD(parameters(networks, head), cfg.learning_rate_stage2, momentum)
        for epoch in range(cfg.epochs_stage2):
            loss_sum = correct = 0.0
            for idx in _batches(n, cfg.batch_size, rng):
                probs, cache = forward(networks, head, [a[idx] for a in arrs])
                loss, grads = backward(networks, head, cache, y[idx])
                opt.step(grads)
                loss_sum += loss * len(idx)
                correct += int((probs.argmax(axis=1) == y[idx]).sum())
            record(2, epoch, loss_sum, correct)
    return history

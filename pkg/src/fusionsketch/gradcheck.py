"""Finite-difference verification of every backward pass.

Each check compares an analytic gradient with central differences of the
same scalar loss and reports ``max|a - b| / max(max|a|, max|b|)``.
"""
import numpy as np

from . import nn
from ._random import generator
from .fusion import FusionKind, FusionLayer, FusionSpec
from .sketch import CountSketchParams

__all__ = ["TOLERANCE", "central_difference", "relative_error", "check_fusion", "check_network", "run_gradcheck"]

TOLERANCE = 1e-5
STEP = 1e-5
KINDS = tuple(k.value for k in FusionKind)


def central_difference(f, x, eps=STEP):
    """Central-difference gradient of scalar ``f`` at ``x`` (perturbs ``x`` in place, then restores it)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


def _corrupted(params):
    out = {}
    for subset, ps in params.items():
        p = ps[0]
        signs = p.signs.copy()
        signs[::2] = -signs[::2]
        out[subset] = [CountSketchParams(p.buckets, signs, p.sketch_dim, p.seed, p.stream), *ps[1:]]
    return out


def check_fusion(kind, sizes, seed=0, sketch_dim=8, corrupt=False, method="fft"):
    """Gradient error of one fusion operator under a quadratic loss.

    The loss is ``sum(w * y) + 0.5 * sum(y**2)`` with ``y`` the fused
    vector and ``w`` a fixed random weight. With ``corrupt`` the analytic
    pass uses sketch params with every second sign flipped (negative control).
    """
    rng = generator(seed, "gradcheck", kind)
    spec = FusionSpec(kind, sketch_dim, seed=seed)
    layer = FusionLayer(spec, sizes)
    xs = [rng.standard_normal(c) for c in sizes]
    w = rng.standard_normal(layer.output_dim)

    def loss():
        y = layer.forward(xs)
        return float(w @ y + 0.5 * y @ y)

    y = layer.forward(xs)
    analytic_layer = FusionLayer(spec, sizes, _corrupted(layer.params)) if corrupt else layer
    grads = analytic_layer.backward(w + y, xs, method=method)
    return max(relative_error(g, central_difference(loss, x)) for g, x in zip(grads, xs))


KINK_MARGIN = 1e-3


def _clear_of_kinks(networks, head, xs):
    _, cache = nn.forward(networks, head, xs)
    pres = [pre for c in cache["networks"] for _, pre in c] + [cache["joint_pre"]]
    if min(np.min(np.abs(p)) for p in pres) < KINK_MARGIN:
        return False
    # a single active unit makes the normalised embedding locally constant
    return all(np.min(np.count_nonzero(e > 0, axis=1)) >= 2 for e in cache["embeddings"])


def check_network(kind, sizes, seed=0, sketch_dim=8, corrupt=False, embedding_dim=5, joint_dim=6, num_classes=3, batch=2):
    """Whole-network gradient error (every parameter) through ``kind`` fusion."""
    spec = FusionSpec(kind, sketch_dim, seed=seed)
    networks, head = nn.build_model(
        sizes, num_classes, spec, embedding_dim=embedding_dim, hidden_dims=(4,), joint_dim=joint_dim, seed=seed
    )
    rng = generator(seed, "gradcheck-net", kind)
    # finite differences are only valid away from ReLU kinks: redraw the
    # point until every pre-activation clears KINK_MARGIN
    for _ in range(1000):
        for p_name, p in nn.parameters(networks, head).items():
            if p_name.endswith("bias"):
                p[...] = 0.1 * rng.standard_normal(p.shape)
        xs = [rng.standard_normal((batch, c)) for c in sizes]
        if _clear_of_kinks(networks, head, xs):
            break
    else:
        raise RuntimeError("could not find a differentiable evaluation point")
    labels = rng.integers(0, num_classes, size=batch)

    def loss():
        _, cache = nn.forward(networks, head, xs)
        return nn.head_backward(head, cache, labels, embedding_grads=False)[0]

    analytic_head = head
    if corrupt:
        analytic_head = nn.JointHead(
            FusionLayer(spec, head.fusion.input_dims, _corrupted(head.fusion.params)),
            head.joint_layer,
            head.classifier,
            head.normalize_embeddings,
        )
    _, cache = nn.forward(networks, analytic_head, xs)
    _, grads = nn.backward(networks, analytic_head, cache, labels)
    return max(
        relative_error(grads[name], central_difference(loss, p))
        for name, p in nn.parameters(networks, head).items()
    )


def run_gradcheck(seed=0, sizes=(4, 3, 5), sketch_dim=8, corrupt=False):
    """Errors for every fusion kind and for the whole network through each kind.

    Returns ``{name: max relative error}`` with names like ``"generalized"``
    and ``"network/generalized"``. The direct (time-domain) sketch adjoint
    is reported as ``"tensor_sketch/direct"``.
    """
    sizes = tuple(int(c) for c in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError("need at least two positive modality sizes")
    report = {}
    for kind in KINDS:
        report[kind] = check_fusion(kind, sizes, seed, sketch_dim, corrupt)
    report["tensor_sketch/direct"] = check_fusion("tensor_sketch", sizes, seed, sketch_dim, corrupt, method="direct")
    for kind in KINDS:
        report[f"network/{kind}"] = check_network(kind, sizes, seed, sketch_dim, corrupt)
    return report

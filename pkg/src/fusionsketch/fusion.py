"""Feature-level fusion operators and their adjoints.

Four operators combine per-modality embedding vectors into one vector:

* ``concat``: the inputs side by side.
* ``bilinear``: left fold of vectorised outer products, row-major.
* ``tensor_sketch``: count sketch of the full outer product, length ``d``.
* ``generalized``: every input copied through, followed by one tensor
  sketch per configured modality subset (size >= 2).

:class:`FusionLayer` binds a :class:`FusionSpec` to concrete input
dimensions and sketch parameters; the module-level ``fuse_*`` functions are
single-shot conveniences that derive parameters from the spec seed.
"""
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from math import prod

import numpy as np

from . import sketch
from .exceptions import CapacityError, DimensionError, FusionConfigError

__all__ = [
    "FusionKind",
    "FusionSpec",
    "Segment",
    "FusedVector",
    "FusionLayer",
    "output_dim",
    "all_subsets",
    "derive_subset_params",
    "fuse",
    "fuse_concat",
    "fuse_bilinear",
    "fuse_tensor_sketch",
    "fuse_generalized",
    "fuse_backward",
]

DEFAULT_BILINEAR_CAP = 2**26


class FusionKind(str, Enum):
    CONCAT = "concat"
    BILINEAR = "bilinear"
    TENSOR_SKETCH = "tensor_sketch"
    GENERALIZED = "generalized"


def _canonical(subsets):
    return tuple(sorted(subsets, key=lambda s: (len(s), s)))


def all_subsets(n, min_size=2):
    """All index subsets of ``range(n)`` with size >= ``min_size``, canonical order."""
    return tuple(c for k in range(min_size, n + 1) for c in combinations(range(n), k))


@dataclass(frozen=True)
class FusionSpec:
    """Declarative description of a fusion operator.

    ``subsets`` is only read by the generalized kind; ``None`` means every
    subset of size 2..n. Subsets are stored sorted, in canonical
    size-then-lexicographic order.
    """

    kind: FusionKind = FusionKind.GENERALIZED
    sketch_dim: int = 4096
    subsets: tuple | None = None
    seed: int = 0
    bilinear_cap: int = DEFAULT_BILINEAR_CAP

    def __post_init__(self):
        try:
            kind = FusionKind(self.kind)
        except ValueError:
            raise FusionConfigError(
                f"unknown fusion kind {self.kind!r}; expected one of "
                f"{[k.value for k in FusionKind]}"
            ) from None
        object.__setattr__(self, "kind", kind)
        if int(self.sketch_dim) < 1:
            raise FusionConfigError(f"sketch_dim must be >= 1, got {self.sketch_dim}")
        object.__setattr__(self, "sketch_dim", int(self.sketch_dim))
        if int(self.bilinear_cap) < 1:
            raise FusionConfigError("bilinear_cap must be >= 1")
        if self.subsets is not None:
            subs = []
            for s in self.subsets:
                t = tuple(int(i) for i in s)
                if len(t) < 2:
                    raise FusionConfigError(f"subset {list(t)} has fewer than two modalities")
                if len(set(t)) != len(t):
                    raise FusionConfigError(f"subset {list(t)} repeats a modality")
                if min(t) < 0:
                    raise FusionConfigError(f"subset {list(t)} has a negative index")
                subs.append(tuple(sorted(t)))
            if len(set(subs)) != len(subs):
                raise FusionConfigError("duplicate subsets")
            object.__setattr__(self, "subsets", _canonical(subs))

    def resolved_subsets(self, n):
        """Sketch subsets for ``n`` modalities, validated against ``n``."""
        if self.kind is FusionKind.TENSOR_SKETCH:
            return (tuple(range(n)),)
        if self.kind is not FusionKind.GENERALIZED:
            return ()
        if self.subsets is None:
            return all_subsets(n)
        for s in self.subsets:
            if max(s) >= n:
                raise FusionConfigError(f"subset {list(s)} out of range for {n} modalities")
        return self.subsets

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "sketch_dim": self.sketch_dim,
            "subsets": None if self.subsets is None else [list(s) for s in self.subsets],
            "seed": self.seed,
            "bilinear_cap": self.bilinear_cap,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "sketch_dim", "subsets", "seed", "bilinear_cap"}
        if unknown:
            raise FusionConfigError(f"unknown FusionSpec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Segment:
    """A contiguous slice of a fused vector.

    ``kind`` is ``"single"`` (identity copy of one modality), ``"bilinear"``
    or ``"sketch"``; ``sources`` are the modality indices it is built from.
    """

    kind: str
    sources: tuple
    offset: int
    length: int

    @property
    def stop(self):
        return self.offset + self.length


@dataclass(frozen=True, eq=False)
class FusedVector:
    values: np.ndarray
    layout: tuple

    def __len__(self):
        return self.values.shape[-1]

    def segment(self, seg):
        return self.values[..., seg.offset : seg.stop]


def output_dim(spec, input_dims):
    input_dims = [int(c) for c in input_dims]
    if not input_dims or min(input_dims) < 1:
        raise ValueError(f"input dims must be positive, got {input_dims}")
    kind = FusionKind(spec.kind)
    if kind is FusionKind.CONCAT:
        return sum(input_dims)
    if kind is FusionKind.BILINEAR:
        return prod(input_dims)
    if kind is FusionKind.TENSOR_SKETCH:
        return spec.sketch_dim
    return sum(input_dims) + len(spec.resolved_subsets(len(input_dims))) * spec.sketch_dim


def derive_subset_params(spec, input_dims, subset):
    """Sketch parameters for ``subset``, one per member, each from its own stream."""
    key = (len(subset), *subset)
    return [
        sketch.make_params(input_dims[m], spec.sketch_dim, spec.seed, stream=(*key, m))
        for m in subset
    ]


def _layout(spec, input_dims):
    n = len(input_dims)
    kind = spec.kind
    segs = []
    off = 0
    if kind in (FusionKind.CONCAT, FusionKind.GENERALIZED):
        for i, c in enumerate(input_dims):
            segs.append(Segment("single", (i,), off, c))
            off += c
    if kind is FusionKind.BILINEAR:
        segs.append(Segment("bilinear", tuple(range(n)), 0, prod(input_dims)))
    for s in spec.resolved_subsets(n):
        segs.append(Segment("sketch", s, off, spec.sketch_dim))
        off += spec.sketch_dim
    return tuple(segs)


def _bilinear_fold(xs):
    """Forward fold; returns every intermediate ``v`` (the last is the output)."""
    v = xs[0]
    vs = [v]
    for x in xs[1:]:
        v = (v[..., :, None] * x[..., None, :]).reshape(*v.shape[:-1], -1)
        vs.append(v)
    return vs


def _bilinear_backward(grad, xs):
    vs = _bilinear_fold(xs)
    grads = [None] * len(xs)
    g = grad
    for k in range(len(xs) - 1, 0, -1):
        prev = vs[k - 1]
        g = g.reshape(*g.shape[:-1], prev.shape[-1], xs[k].shape[-1])
        grads[k] = np.einsum("...ab,...a->...b", g, prev)
        g = np.einsum("...ab,...b->...a", g, xs[k])
    grads[0] = g
    return grads


class FusionLayer:
    """A fusion operator bound to input dimensions and sketch parameters.

    Parameters
    ----------
    spec : FusionSpec
    input_dims : sequence of int
        Embedding dimension of each modality, in modality order.
    params : dict, optional
        Maps each sketch subset (sorted tuple) to its list of
        :class:`~fusionsketch.sketch.CountSketchParams`. Missing subsets are
        derived from ``spec.seed``. Passing explicit params is how
        checkpoints restore a layer without re-drawing hashes.
    """

    def __init__(self, spec, input_dims, params=None):
        self.spec = spec
        self.input_dims = tuple(int(c) for c in input_dims)
        if not self.input_dims or min(self.input_dims) < 1:
            raise ValueError(f"input dims must be positive, got {list(input_dims)}")
        n = len(self.input_dims)
        if spec.kind in (FusionKind.BILINEAR, FusionKind.TENSOR_SKETCH) and n < 2:
            raise ValueError(f"{spec.kind.value} fusion needs at least two modalities")
        if spec.kind is FusionKind.BILINEAR and prod(self.input_dims) > spec.bilinear_cap:
            raise CapacityError(
                f"bilinear output of {prod(self.input_dims)} elements exceeds cap "
                f"{spec.bilinear_cap}; use tensor sketch fusion"
            )
        self.layout = _layout(spec, self.input_dims)
        self.output_dim = output_dim(spec, self.input_dims)
        params = dict(params or {})
        self.params = {}
        for seg in self.layout:
            if seg.kind != "sketch":
                continue
            ps = params.pop(seg.sources, None)
            if ps is None:
                ps = derive_subset_params(spec, self.input_dims, seg.sources)
            ps = list(ps)
            if len(ps) != len(seg.sources):
                raise FusionConfigError(f"subset {list(seg.sources)} needs {len(seg.sources)} params")
            for m, p in zip(seg.sources, ps):
                if p.input_dim != self.input_dims[m] or p.sketch_dim != spec.sketch_dim:
                    raise FusionConfigError(
                        f"params for modality {m} in subset {list(seg.sources)} have shape "
                        f"({p.input_dim}->{p.sketch_dim}), expected "
                        f"({self.input_dims[m]}->{spec.sketch_dim})"
                    )
            self.params[seg.sources] = ps
        if params:
            raise FusionConfigError(f"params given for unused subsets: {sorted(params)}")

    @property
    def n_modalities(self):
        return len(self.input_dims)

    def _check(self, xs):
        if len(xs) != self.n_modalities:
            raise DimensionError(f"expected {self.n_modalities} modalities, got {len(xs)}")
        out = []
        for i, (x, c) in enumerate(zip(xs, self.input_dims)):
            x = np.asarray(x)
            if x.dtype not in (np.float32, np.float64):
                x = x.astype(np.float64)
            if x.ndim not in (1, 2) or x.shape[-1] != c:
                raise DimensionError(f"modality {i}: expected last dim {c}, got shape {x.shape}")
            out.append(x)
        if len({x.shape[:-1] for x in out}) != 1:
            raise DimensionError("modalities disagree on batch shape")
        return out

    def forward(self, xs):
        """Fused values, shape ``(output_dim,)`` or ``(n, output_dim)``."""
        xs = self._check(xs)
        parts = []
        for seg in self.layout:
            if seg.kind == "single":
                parts.append(xs[seg.sources[0]])
            elif seg.kind == "bilinear":
                parts.append(_bilinear_fold(xs)[-1])
            else:
                parts.append(
                    sketch.tensor_sketch([xs[m] for m in seg.sources], self.params[seg.sources])
                )
        return np.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0]

    def fuse(self, xs):
        return FusedVector(self.forward(xs), self.layout)

    def backward(self, grad_out, xs, method="fft"):
        """Per-modality gradients of a scalar loss given its gradient w.r.t. the output.

        A modality that feeds several segments receives the sum of their
        contributions.
        """
        xs = self._check(xs)
        grad_out = np.asarray(grad_out)
        if grad_out.shape != xs[0].shape[:-1] + (self.output_dim,):
            raise DimensionError(
                f"grad_out has shape {grad_out.shape}, expected "
                f"{xs[0].shape[:-1] + (self.output_dim,)}"
            )
        grads = [np.zeros_like(x, dtype=np.result_type(x, grad_out)) for x in xs]
        for seg in self.layout:
            g = grad_out[..., seg.offset : seg.stop]
            if seg.kind == "single":
                grads[seg.sources[0]] += g
            elif seg.kind == "bilinear":
                for i, gi in enumerate(_bilinear_backward(g, xs)):
                    grads[i] += gi
            else:
                sub = [xs[m] for m in seg.sources]
                ps = self.params[seg.sources]
                for k, m in enumerate(seg.sources):
                    grads[m] += sketch.tensor_sketch_backward(g, sub, ps, k, method=method)
        return grads


def _dims(xs):
    return [np.shape(x)[-1] for x in xs]


def fuse(xs, spec):
    """Fuse ``xs`` with parameters derived from ``spec``."""
    return FusionLayer(spec, _dims(xs)).fuse(xs)


def fuse_concat(xs):
    if len(xs) == 0:
        raise ValueError("fuse_concat needs at least one input")
    return fuse(xs, FusionSpec(FusionKind.CONCAT))


def fuse_bilinear(xs, cap=DEFAULT_BILINEAR_CAP):
    if len(xs) < 2:
        raise ValueError("bilinear fusion needs at least two inputs")
    return fuse(xs, FusionSpec(FusionKind.BILINEAR, bilinear_cap=cap))


def fuse_tensor_sketch(xs, spec):
    if FusionKind(spec.kind) is not FusionKind.TENSOR_SKETCH:
        raise FusionConfigError(f"spec kind is {spec.kind.value}, not tensor_sketch")
    return fuse(xs, spec)


def fuse_generalized(xs, spec):
    if FusionKind(spec.kind) is not FusionKind.GENERALIZED:
        raise FusionConfigError(f"spec kind is {spec.kind.value}, not generalized")
    return fuse(xs, spec)


def fuse_backward(grad_out, xs, spec):
    return FusionLayer(spec, _dims(xs)).backward(grad_out, xs)

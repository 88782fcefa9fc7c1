"""Count sketch, Fourier transforms and the tensor sketch kernel.

All functions accept a single vector of shape ``(c,)`` or a batch of shape
``(n, c)`` and operate along the last axis. Buckets are stored 0-based.
"""
from dataclasses import dataclass, field

import numpy as np

from ._random import generator
from .exceptions import DimensionError, FusionConfigError, NumericalConsistencyError

__all__ = [
    "CountSketchParams",
    "make_params",
    "count_sketch",
    "count_sketch_backward",
    "dft",
    "idft",
    "dft_direct",
    "circular_convolve",
    "circular_convolve_direct",
    "tensor_sketch",
    "tensor_sketch_backward",
]

# idft tolerates imaginary residue up to this fraction of max(1, max|real|)
IMAG_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class CountSketchParams:
    """Fixed hash buckets and signs of one count sketch.

    Parameters
    ----------
    buckets : ndarray of int64, shape (input_dim,)
        Target bucket of every input coordinate, in ``[0, sketch_dim)``.
    signs : ndarray of int8, shape (input_dim,)
        Random sign of every input coordinate.
    sketch_dim : int
        Number of buckets ``d``.
    seed : int
        Seed the parameters were drawn from (informational once drawn).
    """

    buckets: np.ndarray
    signs: np.ndarray
    sketch_dim: int
    seed: int = 0
    stream: tuple = field(default=())

    def __post_init__(self):
        buckets = np.array(self.buckets, dtype=np.int64).reshape(-1)
        signs = np.array(self.signs, dtype=np.int8).reshape(-1)
        if int(self.sketch_dim) < 1:
            raise ValueError(f"sketch_dim must be >= 1, got {self.sketch_dim}")
        if buckets.shape != signs.shape:
            raise DimensionError(
                f"buckets and signs differ in length: {buckets.size} != {signs.size}"
            )
        if buckets.size < 1:
            raise ValueError("input_dim must be >= 1")
        if buckets.min() < 0 or buckets.max() >= self.sketch_dim:
            raise ValueError(f"buckets must lie in [0, {self.sketch_dim})")
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be -1 or +1")
        buckets.flags.writeable = False
        signs.flags.writeable = False
        object.__setattr__(self, "buckets", buckets)
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "sketch_dim", int(self.sketch_dim))
        object.__setattr__(self, "stream", tuple(int(k) for k in self.stream))

    @property
    def input_dim(self):
        return self.buckets.size

    def __eq__(self, other):
        if not isinstance(other, CountSketchParams):
            return NotImplemented
        return (
            self.sketch_dim == other.sketch_dim
            and np.array_equal(self.buckets, other.buckets)
            and np.array_equal(self.signs, other.signs)
        )

    def __hash__(self):
        return hash((self.sketch_dim, self.buckets.tobytes(), self.signs.tobytes()))

    def __repr__(self):
        return (
            f"CountSketchParams(input_dim={self.input_dim}, sketch_dim={self.sketch_dim}, "
            f"seed={self.seed}, stream={self.stream})"
        )

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "sketch_dim": self.sketch_dim,
            "seed": self.seed,
            "stream": list(self.stream),
            "buckets": self.buckets.tolist(),
            "signs": self.signs.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        p = cls(d["buckets"], d["signs"], d["sketch_dim"], d.get("seed", 0), tuple(d.get("stream", ())))
        if "input_dim" in d and d["input_dim"] != p.input_dim:
            raise DimensionError("input_dim does not match stored buckets")
        return p


def make_params(input_dim, sketch_dim, seed, stream=()):
    """Draw count sketch parameters.

    Buckets are uniform over ``[0, sketch_dim)`` and signs uniform over
    ``{-1, +1}``, both from a Philox stream keyed by ``(seed, *stream)``, so
    the same arguments always give the same parameters and different
    ``stream`` keys give independent ones.
    """
    input_dim = int(input_dim)
    sketch_dim = int(sketch_dim)
    if input_dim < 1 or sketch_dim < 1:
        raise ValueError(
            f"input_dim and sketch_dim must be positive, got {input_dim} and {sketch_dim}"
        )
    rng = generator(seed, *stream)
    buckets = rng.integers(0, sketch_dim, size=input_dim, dtype=np.int64)
    signs = (2 * rng.integers(0, 2, size=input_dim, dtype=np.int8) - 1).astype(np.int8)
    return CountSketchParams(buckets, signs, sketch_dim, int(seed), tuple(stream))


def _as_float(x):
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return x


def _check_last(x, n, what):
    if x.ndim not in (1, 2):
        raise DimensionError(f"{what} must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[-1] != n:
        raise DimensionError(f"{what} has length {x.shape[-1]}, expected {n}")


def count_sketch(x, params):
    """Project ``x`` with the count sketch ``params``.

    ``y[j] = sum(signs[n] * x[n] for n with buckets[n] == j)``, computed by
    scatter-add; the sketch matrix is never formed.
    """
    x = _as_float(x)
    _check_last(x, params.input_dim, "x")
    d = params.sketch_dim
    vals = x * params.signs
    if x.ndim == 1:
        out = np.bincount(params.buckets, weights=vals, minlength=d)
    else:
        n = x.shape[0]
        idx = (np.arange(n, dtype=np.int64)[:, None] * d + params.buckets).ravel()
        out = np.bincount(idx, weights=vals.ravel(), minlength=n * d).reshape(n, d)
    return out.astype(x.dtype, copy=False)


def count_sketch_backward(grad_y, params):
    """Adjoint of :func:`count_sketch`: ``g[n] = signs[n] * grad_y[buckets[n]]``."""
    grad_y = _as_float(grad_y)
    _check_last(grad_y, params.sketch_dim, "grad_y")
    return grad_y[..., params.buckets] * params.signs


def dft(x):
    return np.fft.fft(_as_float(x), axis=-1)


def idft(X):
    """Inverse DFT returning the real part.

    Raises
    ------
    NumericalConsistencyError
        If the imaginary residue is larger than ``IMAG_TOLERANCE`` relative
        to ``max(1, max|real|)``, i.e. ``X`` was not the spectrum of a real
        signal.
    """
    y = np.fft.ifft(np.asarray(X, dtype=np.complex128), axis=-1)
    scale = max(1.0, float(np.max(np.abs(y.real), initial=0.0)))
    resid = float(np.max(np.abs(y.imag), initial=0.0))
    if resid > IMAG_TOLERANCE * scale:
        raise NumericalConsistencyError(
            f"inverse transform has imaginary residue {resid:.3e} (scale {scale:.3e})"
        )
    return y.real.copy()


def dft_direct(x):
    """O(n^2) DFT by explicit summation; reference for :func:`dft`."""
    x = _as_float(x)
    n = x.shape[-1]
    k = np.arange(n)
    w = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ w.T


def circular_convolve(a, b):
    """``c[k] = sum_j a[j] * b[(k - j) mod d]`` via the frequency domain."""
    a = _as_float(a)
    b = _as_float(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"length mismatch: {a.shape[-1]} != {b.shape[-1]}")
    return idft(dft(a) * dft(b))


def circular_convolve_direct(a, b):
    a = _as_float(a)
    b = _as_float(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"length mismatch: {a.shape[-1]} != {b.shape[-1]}")
    d = a.shape[-1]
    # shift[k, j] = (k - j) mod d
    shift = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    return np.einsum("...j,...kj->...k", a, b[..., shift])


def _check_inputs(xs, ps):
    if len(xs) != len(ps):
        raise ValueError(f"got {len(xs)} inputs but {len(ps)} parameter sets")
    if len(xs) < 2:
        raise ValueError("tensor sketch needs at least two inputs")
    dims = {p.sketch_dim for p in ps}
    if len(dims) != 1:
        raise FusionConfigError(f"sketch dims differ across inputs: {sorted(dims)}")
    return dims.pop()


def tensor_sketch(xs, ps):
    """Count sketch of the outer product of ``xs`` without forming it.

    The per-input count sketches are transformed, multiplied element-wise
    and transformed back, which is their circular convolution.
    """
    d = _check_inputs(xs, ps)
    spec = None
    for x, p in zip(xs, ps):
        f = np.fft.rfft(count_sketch(x, p), axis=-1)
        spec = f if spec is None else spec * f
    out = np.fft.irfft(spec, n=d, axis=-1)
    return out.astype(np.result_type(*[_as_float(x) for x in xs]), copy=False)


def tensor_sketch_backward(grad_y, xs, ps, modality_index, method="fft"):
    """Gradient of a scalar loss w.r.t. ``xs[modality_index]``.

    Parameters
    ----------
    grad_y : array, shape (d,) or (n, d)
        Gradient of the loss w.r.t. the tensor sketch output.
    method : {"fft", "direct"}
        ``"fft"`` multiplies by the conjugate spectrum of the other sketches
        and applies the count sketch adjoint. ``"direct"`` evaluates
        ``g[j] = s[j] * sum_k grad_y[k] * P[(k - h[j]) mod d]`` with ``P``
        the time-domain circular convolution of the other sketches.
    """
    d = _check_inputs(xs, ps)
    i = int(modality_index)
    if not 0 <= i < len(xs):
        raise ValueError(f"modality_index {modality_index} out of range for {len(xs)} inputs")
    grad_y = _as_float(grad_y)
    _check_last(grad_y, d, "grad_y")
    others = [count_sketch(x, p) for j, (x, p) in enumerate(zip(xs, ps)) if j != i]

    if method == "fft":
        spec = np.fft.rfft(others[0], axis=-1)
        for s in others[1:]:
            spec = spec * np.fft.rfft(s, axis=-1)
        r = np.fft.irfft(np.fft.rfft(grad_y, axis=-1) * np.conj(spec), n=d, axis=-1)
        return count_sketch_backward(r, ps[i])
    if method == "direct":
        conv = others[0]
        for s in others[1:]:
            conv = circular_convolve_direct(conv, s)
        h = ps[i].buckets
        idx = (np.arange(d)[None, :] - h[:, None]) % d  # (c, d)
        t = conv[..., idx]  # (..., c, d)
        return ps[i].signs * np.einsum("...k,...jk->...j", grad_y, t)
    raise ValueError(f"unknown method {method!r}")

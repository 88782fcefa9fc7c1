"""Modality pools, synthetic generation, set composition and JSON-lines I/O.

A :class:`ModalityPool` holds, for every subject and modality, a stack of
feature vectors. Training and test sets are composed from a pool by drawing
one vector per modality for each subject, independently and with
replacement.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._random import generator
from .exceptions import DataError, EmbeddingParseError, EmptyPoolError, SchemaError

__all__ = [
    "ModalitySpec",
    "SynthSpec",
    "ModalityPool",
    "MultimodalSample",
    "SampleSet",
    "generate_synthetic",
    "compose_sets",
    "compose_sample_set",
    "load_embeddings",
    "save_embeddings",
]

DEFAULT_SETS_PER_SUBJECT = 250


@dataclass(frozen=True)
class ModalitySpec:
    dim: int = 32
    noise_std: float = 1.0
    distortion_rate: float = 0.0

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"modality dim must be >= 1, got {self.dim}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0 <= self.distortion_rate <= 1:
            raise ValueError(f"distortion_rate must be in [0, 1], got {self.distortion_rate}")


def _default_modalities():
    return (ModalitySpec(), ModalitySpec(), ModalitySpec())


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic multimodal identity data.

    Each subject has a latent identity vector. A modality observes a
    subject through a fixed random linear map of a mix of the shared latent
    (weight ``cross_modality_correlation``) and a modality-private latent,
    plus Gaussian noise. With probability ``distortion_rate`` a sample is
    replaced by pure noise of matching scale.

    With ``disjoint_distortion`` a single uniform draw per (subject, sample
    slot) picks at most one distorted modality, so distortions never
    coincide on the same slot; the rates must then sum to at most 1.
    """

    num_subjects: int = 20
    modalities: tuple = field(default_factory=_default_modalities)
    samples_per_subject_modality: int = 8
    test_samples_per_subject_modality: int = 8
    latent_dim: int = 16
    cross_modality_correlation: float = 0.5
    disjoint_distortion: bool = False
    seed: int = 0

    def __post_init__(self):
        mods = tuple(m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.modalities)
        object.__setattr__(self, "modalities", mods)
        if int(self.num_subjects) < 1:
            raise ValueError(f"num_subjects must be >= 1, got {self.num_subjects}")
        if not mods:
            raise ValueError("at least one modality is required")
        for name in ("samples_per_subject_modality", "test_samples_per_subject_modality", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.cross_modality_correlation <= 1:
            raise ValueError("cross_modality_correlation must be in [0, 1]")
        if self.disjoint_distortion and sum(m.distortion_rate for m in mods) > 1 + 1e-12:
            raise ValueError("disjoint distortion rates must sum to at most 1")

    @property
    def modality_names(self):
        width = len(str(len(self.modalities) - 1))
        return tuple(f"m{i:0{width}d}" for i in range(len(self.modalities)))


class ModalityPool:
    """Per-subject, per-modality stacks of feature vectors.

    Parameters
    ----------
    entries : dict
        ``{subject: {modality: array of shape (k, dim)}}``. Arrays are copied
        and made read-only.
    dims : dict, optional
        ``{modality: dim}``. Inferred from ``entries`` when omitted.
    """

    def __init__(self, entries, dims=None):
        inferred = {}
        clean = {}
        for subject in sorted(entries):
            clean[int(subject)] = {}
            for modality in sorted(entries[subject]):
                arr = np.array(entries[subject][modality], dtype=np.float64)
                if arr.ndim == 1:
                    arr = arr[None, :]
                if arr.ndim != 2 or arr.shape[0] == 0:
                    raise SchemaError(f"subject {subject}, modality {modality!r}: need a (k, dim) stack")
                if not np.all(np.isfinite(arr)):
                    raise DataError(f"subject {subject}, modality {modality!r}: non-finite features")
                dim = inferred.setdefault(modality, arr.shape[1])
                if dim != arr.shape[1]:
                    raise SchemaError(
                        f"modality {modality!r} has dim {dim} but subject {subject} has {arr.shape[1]}"
                    )
                arr.flags.writeable = False
                clean[int(subject)][modality] = arr
        if dims is not None:
            for m, d in inferred.items():
                if dims.get(m) != d:
                    raise SchemaError(f"modality {m!r}: declared dim {dims.get(m)}, found {d}")
            inferred = dict(dims)
        self._entries = clean
        self.dims = {m: int(inferred[m]) for m in sorted(inferred)}

    @property
    def modalities(self):
        """Modality names in experiment order (sorted)."""
        return tuple(self.dims)

    @property
    def subjects(self):
        return tuple(self._entries)

    def samples(self, subject, modality):
        try:
            return self._entries[subject][modality]
        except KeyError:
            raise DataError(f"subject {subject} has no samples for modality {modality!r}") from None

    def __len__(self):
        return sum(a.shape[0] for s in self._entries.values() for a in s.values())

    def __eq__(self, other):
        if not isinstance(other, ModalityPool):
            return NotImplemented
        if self.dims != other.dims or self.subjects != other.subjects:
            return False
        for s in self.subjects:
            a, b = self._entries[s], other._entries[s]
            if a.keys() != b.keys() or any(not np.array_equal(a[m], b[m]) for m in a):
                return False
        return True

    def __repr__(self):
        return f"ModalityPool(subjects={len(self.subjects)}, modalities={self.dims}, vectors={len(self)})"

    def check_complete(self):
        for s in self.subjects:
            for m in self.modalities:
                if m not in self._entries[s]:
                    raise DataError(f"subject {s} has no samples for modality {m!r}")

    def restrict(self, modalities):
        """A pool holding only ``modalities``."""
        missing = set(modalities) - set(self.dims)
        if missing:
            raise DataError(f"unknown modalities {sorted(missing)}")
        return ModalityPool(
            {s: {m: e[m] for m in modalities if m in e} for s, e in self._entries.items()},
            {m: self.dims[m] for m in modalities},
        )


@dataclass(frozen=True, eq=False)
class MultimodalSample:
    subject_id: int
    modality_vectors: tuple


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Stacked composed sets: ``X[m]`` is ``(n, dim_m)``, ``y`` holds subject ids."""

    X: list
    y: np.ndarray
    modalities: tuple

    def __len__(self):
        return self.y.shape[0]

    @classmethod
    def from_samples(cls, samples, modalities):
        if not samples:
            return cls([np.empty((0, 0)) for _ in modalities], np.empty(0, dtype=np.int64), tuple(modalities))
        X = [np.stack([s.modality_vectors[i] for s in samples]) for i in range(len(modalities))]
        return cls(X, np.array([s.subject_id for s in samples], dtype=np.int64), tuple(modalities))

    def samples(self):
        return [
            MultimodalSample(int(self.y[k]), tuple(x[k] for x in self.X)) for k in range(len(self))
        ]


def _pool_from_draws(spec, maps, latents, n_samples, rng):
    names = spec.modality_names
    entries = {s: {} for s in range(spec.num_subjects)}
    n_mod = len(spec.modalities)
    # distorted[s, k, m]
    if spec.disjoint_distortion:
        u = rng.random((spec.num_subjects, n_samples))
        edges = np.cumsum([m.distortion_rate for m in spec.modalities])
        lo = np.concatenate([[0.0], edges[:-1]])
        distorted = (u[..., None] >= lo) & (u[..., None] < edges)
    else:
        u = rng.random((spec.num_subjects, n_samples, n_mod))
        distorted = u < np.array([m.distortion_rate for m in spec.modalities])
    for mi, (mspec, name) in enumerate(zip(spec.modalities, names)):
        clean = latents[mi] @ maps[mi].T  # (subjects, dim)
        noise = rng.standard_normal((spec.num_subjects, n_samples, mspec.dim))
        junk = rng.standard_normal((spec.num_subjects, n_samples, mspec.dim))
        x = clean[:, None, :] + mspec.noise_std * noise
        # replacement noise matches the marginal scale of a clean sample
        junk *= math.sqrt(1.0 + mspec.noise_std**2)
        x = np.where(distorted[..., mi : mi + 1], junk, x)
        for s in range(spec.num_subjects):
            entries[s][name] = x[s]
    return ModalityPool(entries)


def generate_synthetic(spec):
    """Train and test pools for ``spec``; deterministic in ``spec.seed``."""
    rng = generator(spec.seed, "identity")
    k = spec.latent_dim
    shared = rng.standard_normal((spec.num_subjects, k))
    rho = spec.cross_modality_correlation
    latents, maps = [], []
    for mi, mspec in enumerate(spec.modalities):
        mrng = generator(spec.seed, "modality", mi)
        private = mrng.standard_normal((spec.num_subjects, k))
        latents.append(math.sqrt(rho) * shared + math.sqrt(1 - rho) * private)
        maps.append(mrng.standard_normal((mspec.dim, k)) / math.sqrt(k))
    train = _pool_from_draws(
        spec, maps, latents, spec.samples_per_subject_modality, generator(spec.seed, "train")
    )
    test = _pool_from_draws(
        spec, maps, latents, spec.test_samples_per_subject_modality, generator(spec.seed, "test")
    )
    return train, test


def _draw_indices(pool, sets_per_subject, seed):
    if int(sets_per_subject) < 1:
        raise ValueError(f"sets_per_subject must be >= 1, got {sets_per_subject}")
    if not pool.subjects:
        raise EmptyPoolError("pool has no subjects")
    pool.check_complete()
    rng = generator(seed, "compose")
    draws = {}
    for s in pool.subjects:
        draws[s] = [
            rng.integers(0, pool.samples(s, m).shape[0], size=sets_per_subject)
            for m in pool.modalities
        ]
    return draws


def compose_sample_set(pool, sets_per_subject=DEFAULT_SETS_PER_SUBJECT, seed=0):
    """Stacked version of :func:`compose_sets` (same draws, same order)."""
    draws = _draw_indices(pool, sets_per_subject, seed)
    X = []
    for mi, m in enumerate(pool.modalities):
        X.append(np.concatenate([pool.samples(s, m)[draws[s][mi]] for s in pool.subjects]))
    y = np.repeat(np.array(pool.subjects, dtype=np.int64), sets_per_subject)
    return SampleSet(X, y, pool.modalities)


def compose_sets(pool, sets_per_subject=DEFAULT_SETS_PER_SUBJECT, seed=0):
    """Randomly composed multimodal sets, ``sets_per_subject`` for every subject.

    Each set takes one vector per modality, drawn uniformly and with
    replacement from that subject's pool. Subjects appear in ascending
    order.

    Raises
    ------
    DataError
        If a subject lacks samples for some modality.
    """
    return compose_sample_set(pool, sets_per_subject, seed).samples()


def save_embeddings(pool, path):
    """Write ``pool`` as JSON lines, subjects then modalities in sorted order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in pool.subjects:
            for m in pool.modalities:
                if m not in pool._entries[s]:
                    continue
                for vec in pool.samples(s, m):
                    fh.write(json.dumps({"subject": s, "modality": m, "features": vec.tolist()}))
                    fh.write("\n")


def load_embeddings(path):
    """Read a JSON-lines embedding file into a :class:`ModalityPool`.

    Each non-blank line is ``{"subject": int, "modality": str, "features":
    [numbers]}``.
    """
    entries = {}
    dims = {}
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingParseError(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or set(rec) != {"subject", "modality", "features"}:
                raise EmbeddingParseError(lineno, "expected keys subject, modality, features")
            subject, modality, feats = rec["subject"], rec["modality"], rec["features"]
            if isinstance(subject, bool) or not isinstance(subject, int):
                raise EmbeddingParseError(lineno, "subject must be an integer")
            if not isinstance(modality, str) or not modality:
                raise EmbeddingParseError(lineno, "modality must be a non-empty string")
            if (
                not isinstance(feats, list)
                or not feats
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats)
            ):
                raise EmbeddingParseError(lineno, "features must be a non-empty list of numbers")
            vec = np.array(feats, dtype=np.float64)
            if not np.all(np.isfinite(vec)):
                raise EmbeddingParseError(lineno, "non-finite feature value")
            d = dims.setdefault(modality, vec.size)
            if d != vec.size:
                raise SchemaError(
                    f"line {lineno}: modality {modality!r} has dim {vec.size}, earlier lines have {d}"
                )
            entries.setdefault(subject, {}).setdefault(modality, []).append(vec)
    if not entries:
        raise EmptyPoolError(f"{path}: no embeddings found")
    return ModalityPool({s: {m: np.stack(v) for m, v in e.items()} for s, e in entries.items()})

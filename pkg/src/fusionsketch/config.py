"""Experiment configuration.

The JSON config is validated in full before any work starts; unknown keys
are rejected. Every random stream derives from the top-level ``seed``:

========================  =============================================
stream                    derivation
========================  =============================================
synthetic database        ``data.synthetic.seed`` or ``derive(seed, "synthetic")``
sketch hashes             ``fusion.seed`` or ``derive(seed, "fusion")``
composed train sets       ``derive(seed, "compose-train", repetition)``
composed test sets        ``derive(seed, "compose-test", repetition)``
model init / shuffling    ``derive(seed, "model", repetition, method, *subset)``
========================  =============================================
"""
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, NonNegativeInt, PositiveInt
from pydantic import ValidationError, field_validator, model_validator

from ._random import derive_seed
from .data import ModalitySpec, SynthSpec, generate_synthetic, load_embeddings
from .exceptions import FusionConfigError
from .fusion import FusionSpec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SyntheticDataConfig",
    "METHODS",
    "load_config",
    "load_synth_spec",
    "parse_config",
]

FUSION_METHODS = ("concat", "bilinear", "tensor_sketch", "generalized")
SCORE_METHODS = ("cnn_sum", "cnn_major")
METHODS = ("unimodal", *SCORE_METHODS, *FUSION_METHODS)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending fields."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticModalityConfig(_Strict):
    dim: PositiveInt = 32
    noise_std: NonNegativeFloat = 1.0
    distortion_rate: float = Field(0.0, ge=0.0, le=1.0)


class SyntheticDataConfig(_Strict):
    num_subjects: PositiveInt = 20
    modalities: list[SyntheticModalityConfig] = Field(
        default_factory=lambda: [SyntheticModalityConfig() for _ in range(3)], min_length=1
    )
    samples_per_subject_modality: PositiveInt = 8
    test_samples_per_subject_modality: PositiveInt = 8
    latent_dim: PositiveInt = 16
    cross_modality_correlation: float = Field(0.5, ge=0.0, le=1.0)
    disjoint_distortion: bool = False
    seed: Optional[NonNegativeInt] = None

    @model_validator(mode="after")
    def _disjoint_rates(self):
        if self.disjoint_distortion and sum(m.distortion_rate for m in self.modalities) > 1:
            raise ValueError("disjoint distortion rates must sum to at most 1")
        return self

    def to_spec(self, root_seed=0):
        seed = self.seed if self.seed is not None else derive_seed(root_seed, "synthetic")
        return SynthSpec(
            num_subjects=self.num_subjects,
            modalities=tuple(ModalitySpec(**m.model_dump()) for m in self.modalities),
            samples_per_subject_modality=self.samples_per_subject_modality,
            test_samples_per_subject_modality=self.test_samples_per_subject_modality,
            latent_dim=self.latent_dim,
            cross_modality_correlation=self.cross_modality_correlation,
            disjoint_distortion=self.disjoint_distortion,
            seed=seed,
        )


class EmbeddingDataConfig(_Strict):
    train: Path
    test: Optional[Path] = None


class DataConfig(_Strict):
    synthetic: Optional[SyntheticDataConfig] = None
    embeddings: Optional[EmbeddingDataConfig] = None
    sets_per_subject: PositiveInt = 250
    test_sets_per_subject: PositiveInt = 250

    @model_validator(mode="after")
    def _one_source(self):
        if (self.synthetic is None) == (self.embeddings is None):
            raise ValueError("exactly one of 'synthetic' or 'embeddings' must be given")
        return self


class FusionConfig(_Strict):
    kind: Literal["concat", "bilinear", "tensor_sketch", "generalized"] = "generalized"
    sketch_dim: PositiveInt = 4096
    subsets: Optional[list[list[NonNegativeInt]]] = None
    seed: Optional[NonNegativeInt] = None

    @model_validator(mode="after")
    def _valid_spec(self):
        try:
            FusionSpec(self.kind, self.sketch_dim, self.subsets, 0)
        except FusionConfigError as exc:
            raise ValueError(str(exc)) from None
        return self


class ModelConfig(_Strict):
    embedding_dim: PositiveInt = 1024
    hidden_dims: list[PositiveInt] = Field(default_factory=list)
    joint_dim: PositiveInt = 1024
    normalize_embeddings: bool = True


class TrainSection(_Strict):
    learning_rate: float = Field(0.01, gt=0)
    learning_rate_stage2: float = Field(0.001, gt=0)
    epochs_stage1: NonNegativeInt = 5
    epochs_stage2: NonNegativeInt = 5
    batch_size: PositiveInt = 32
    optimizer: Literal["sgd", "sgd-momentum"] = "sgd-momentum"
    momentum: float = Field(0.9, ge=0, lt=1)
    precision: Literal["double", "single"] = "double"


class OutputConfig(_Strict):
    dir: Path = Path("runs")


class ExperimentConfig(_Strict):
    version: Literal[1] = 1
    seed: NonNegativeInt = 0
    data: DataConfig = Field(default_factory=lambda: DataConfig(synthetic=SyntheticDataConfig()))
    model: ModelConfig = Field(default_factory=ModelConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    methods: list[Literal[METHODS]] = Field(
        default_factory=lambda: ["unimodal", "cnn_sum", "cnn_major", "concat", "generalized"],
        min_length=1,
    )
    subsets: Optional[list[list[NonNegativeInt]]] = None
    repetitions: PositiveInt = 5
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("methods")
    @classmethod
    def _unique_methods(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("methods must not repeat")
        return v

    @field_validator("subsets")
    @classmethod
    def _valid_subsets(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("subsets must not be empty")
        seen = set()
        for s in v:
            if len(s) < 1 or len(set(s)) != len(s):
                raise ValueError(f"subset {s} must be non-empty without repeats")
            key = tuple(sorted(s))
            if key in seen:
                raise ValueError(f"duplicate subset {s}")
            seen.add(key)
        return [sorted(s) for s in v]

    def fusion_seed(self):
        return self.fusion.seed if self.fusion.seed is not None else derive_seed(self.seed, "fusion")

    def classifier_params(self, fusion=None):
        """Keyword arguments for :class:`~fusionsketch.estimators.MultimodalFusionClassifier`."""
        return dict(
            fusion=fusion or self.fusion.kind,
            sketch_dim=self.fusion.sketch_dim,
            subsets=None if self.fusion.subsets is None else [tuple(s) for s in self.fusion.subsets],
            embedding_dim=self.model.embedding_dim,
            hidden_dims=tuple(self.model.hidden_dims),
            joint_dim=self.model.joint_dim,
            normalize_embeddings=self.model.normalize_embeddings,
            fusion_seed=self.fusion_seed(),
            **self.train.model_dump(),
        )

    def load_pools(self):
        """``(train_pool, test_pool)``; ``test_pool`` is None if no test source is configured."""
        if self.data.synthetic is not None:
            return generate_synthetic(self.data.synthetic.to_spec(self.seed))
        emb = self.data.embeddings
        train = load_embeddings(emb.train)
        return train, (load_embeddings(emb.test) if emb.test is not None else None)


def _format_errors(exc):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _resolve_paths(raw, base):
    emb = raw.get("data", {}).get("embeddings") if isinstance(raw.get("data"), dict) else None
    if isinstance(emb, dict):
        for key in ("train", "test"):
            if isinstance(emb.get(key), str) and not Path(emb[key]).is_absolute():
                emb[key] = str(base / emb[key])
    return raw


def parse_config(raw, **overrides):
    """Validate a config mapping; ``overrides`` (e.g. ``seed``) replace top-level keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path, **overrides):
    """Read and validate a JSON experiment config.

    Relative embedding paths resolve against the config file's directory.
    """
    raw = _read_json(path)
    if isinstance(raw, dict):
        raw = _resolve_paths(raw, Path(path).resolve().parent)
    return parse_config(raw, **overrides)


def load_synth_spec(path, seed=None):
    """Read a standalone synthetic-data spec (the ``data.synthetic`` block)."""
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError("synthetic spec must be a JSON object")
    if seed is not None:
        raw = {**raw, "seed": seed}
    try:
        cfg = SyntheticDataConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    return cfg.to_spec()

"""Count-sketch based compact bilinear fusion of multimodal embeddings.

The sketching primitives live in :mod:`fusionsketch.sketch`, the fusion
operators in :mod:`fusionsketch.fusion` and the small dense training stack
in :mod:`fusionsketch.nn`. Most users want the scikit-learn style
estimators re-exported here.
"""
from .data import ModalityPool, ModalitySpec, SampleSet, SynthSpec, compose_sample_set, compose_sets, generate_synthetic
from .estimators import MultimodalFusionClassifier, ScoreFusionClassifier, TensorSketchFusion, check_multimodal
from .evaluation import fuse_scores_majority, fuse_scores_sum, rank_one_accuracy
from .exceptions import (
    CapacityError,
    DataError,
    DimensionError,
    EmbeddingParseError,
    EmptyPoolError,
    FusionConfigError,
    NumericalConsistencyError,
    SchemaError,
)
from .fusion import FusedVector, FusionKind, FusionLayer, FusionSpec, Segment, fuse, output_dim
from .sketch import CountSketchParams, count_sketch, make_params, tensor_sketch, tensor_sketch_backward

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CountSketchParams",
    "DataError",
    "DimensionError",
    "EmbeddingParseError",
    "EmptyPoolError",
    "FusedVector",
    "FusionConfigError",
    "FusionKind",
    "FusionLayer",
    "FusionSpec",
    "ModalityPool",
    "ModalitySpec",
    "MultimodalFusionClassifier",
    "NumericalConsistencyError",
    "SampleSet",
    "SchemaError",
    "ScoreFusionClassifier",
    "Segment",
    "SynthSpec",
    "TensorSketchFusion",
    "check_multimodal",
    "compose_sample_set",
    "compose_sets",
    "count_sketch",
    "fuse",
    "fuse_scores_majority",
    "fuse_scores_sum",
    "generate_synthetic",
    "make_params",
    "output_dim",
    "rank_one_accuracy",
    "tensor_sketch",
    "tensor_sketch_backward",
]

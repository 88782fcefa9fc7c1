"""scikit-learn compatible estimators.

Multimodal input ``X`` is either a list with one ``(n_samples, dim_i)``
array per modality, or a single ``(n_samples, sum(dims))`` array together
with the ``modality_dims`` parameter that says how to split its columns.
The second form lets these estimators sit inside a ``Pipeline``.
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from . import nn
from ._random import derive_seed
from .evaluation import fuse_scores_majority, fuse_scores_sum
from .exceptions import DimensionError
from .fusion import FusionLayer, FusionSpec

__all__ = [
    "check_multimodal",
    "TensorSketchFusion",
    "MultimodalFusionClassifier",
    "ScoreFusionClassifier",
]


def check_multimodal(X, modality_dims=None, dtype=np.float64):
    """Validate multimodal input and return a list of 2-D float arrays.

    Raises
    ------
    DimensionError
        If the modalities disagree on sample count, or a single array does
        not match ``modality_dims``.
    """
    if isinstance(X, (list, tuple)):
        Xs = [check_array(x, dtype=dtype, ensure_min_samples=1) for x in X]
        if not Xs:
            raise ValueError("X contains no modalities")
        if len({x.shape[0] for x in Xs}) != 1:
            raise DimensionError("modalities have different numbers of samples")
        if modality_dims is not None and [x.shape[1] for x in Xs] != list(modality_dims):
            raise DimensionError(
                f"modality dims {[x.shape[1] for x in Xs]} do not match {list(modality_dims)}"
            )
        return Xs
    X = check_array(X, dtype=dtype)
    if modality_dims is None:
        raise ValueError("a single array X needs modality_dims to be split into modalities")
    dims = [int(d) for d in modality_dims]
    if min(dims) < 1 or sum(dims) != X.shape[1]:
        raise DimensionError(f"X has {X.shape[1]} columns, modality_dims sum to {sum(dims)}")
    return np.split(X, np.cumsum(dims)[:-1], axis=1)


class TensorSketchFusion(TransformerMixin, BaseEstimator):
    """Stateless fusion transformer.

    ``fit`` only validates and draws the fixed sketch parameters;
    ``transform`` returns the fused matrix of shape ``(n, output_dim_)``.

    Parameters
    ----------
    kind : {"concat", "bilinear", "tensor_sketch", "generalized"}
    sketch_dim : int, default=4096
    subsets : list of tuples, default=None
        Sketch subsets for ``kind="generalized"``; ``None`` means all.
    seed : int, default=0
    modality_dims : list of int, default=None
        Column split when ``X`` is a single array.

    Examples
    --------
    >>> import numpy as np
    >>> X = [np.ones((2, 3)), np.ones((2, 4))]
    >>> TensorSketchFusion(kind="generalized", sketch_dim=16).fit_transform(X).shape
    (2, 23)
    """

    def __init__(self, kind="generalized", sketch_dim=4096, subsets=None, seed=0, modality_dims=None):
        self.kind = kind
        self.sketch_dim = sketch_dim
        self.subsets = subsets
        self.seed = seed
        self.modality_dims = modality_dims

    def fit(self, X, y=None):
        Xs = check_multimodal(X, self.modality_dims)
        spec = FusionSpec(self.kind, self.sketch_dim, self.subsets, self.seed)
        self.fusion_layer_ = FusionLayer(spec, [x.shape[1] for x in Xs])
        self.n_features_in_ = sum(x.shape[1] for x in Xs)
        self.output_dim_ = self.fusion_layer_.output_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "fusion_layer_")
        Xs = check_multimodal(X, self.modality_dims or self.fusion_layer_.input_dims)
        return self.fusion_layer_.forward(Xs)


class MultimodalFusionClassifier(ClassifierMixin, BaseEstimator):
    """Modality networks, feature-level fusion and a softmax head, trained in two steps.

    Stage 1 fits the joint layer and classifier on frozen modality
    networks; stage 2 fine-tunes everything jointly.

    Parameters
    ----------
    fusion : {"concat", "bilinear", "tensor_sketch", "generalized"}
    sketch_dim : int, default=4096
    subsets : list of tuples, default=None
    embedding_dim : int, default=1024
        Width of each modality's embedding layer.
    hidden_dims : tuple of int, default=()
        Hidden widths of each modality network before the embedding layer.
    joint_dim : int, default=1024
    learning_rate, learning_rate_stage2 : float
    epochs_stage1, epochs_stage2 : int
    batch_size : int
    optimizer : {"sgd", "sgd-momentum"}
    momentum : float
    precision : {"double", "single"}
    modality_dims : list of int, default=None
    normalize_embeddings : bool, default=True
        Scale each embedding to unit L2 norm before fusion.
    fusion_seed : int, default=None
        Seed for the sketch hashes; derived from ``random_state`` if None.
    random_state : int, default=0
        Root of every random stream (init, shuffling, hashes). ``None`` is
        treated as 0: there is no nondeterministic mode.

    Attributes
    ----------
    classes_ : ndarray
    networks_ : list of ModalityNetwork
    head_ : JointHead
    history_ : list of EpochMetrics
    """

    def __init__(
        self,
        fusion="generalized",
        sketch_dim=4096,
        subsets=None,
        embedding_dim=1024,
        hidden_dims=(),
        joint_dim=1024,
        learning_rate=0.01,
        learning_rate_stage2=0.001,
        epochs_stage1=5,
        epochs_stage2=5,
        batch_size=32,
        optimizer="sgd-momentum",
        momentum=0.9,
        precision="double",
        modality_dims=None,
        normalize_embeddings=True,
        fusion_seed=None,
        random_state=0,
    ):
        self.fusion = fusion
        self.sketch_dim = sketch_dim
        self.subsets = subsets
        self.embedding_dim = embedding_dim
        self.hidden_dims = hidden_dims
        self.joint_dim = joint_dim
        self.learning_rate = learning_rate
        self.learning_rate_stage2 = learning_rate_stage2
        self.epochs_stage1 = epochs_stage1
        self.epochs_stage2 = epochs_stage2
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.momentum = momentum
        self.precision = precision
        self.modality_dims = modality_dims
        self.normalize_embeddings = normalize_embeddings
        self.fusion_seed = fusion_seed
        self.random_state = random_state

    def _root_seed(self):
        return 0 if self.random_state is None else int(self.random_state)

    def fusion_spec(self):
        seed = self.fusion_seed
        if seed is None:
            seed = derive_seed(self._root_seed(), "fusion")
        return FusionSpec(self.fusion, self.sketch_dim, self.subsets, seed)

    def train_config(self):
        return nn.TrainConfig(
            learning_rate=self.learning_rate,
            learning_rate_stage2=self.learning_rate_stage2,
            epochs_stage1=self.epochs_stage1,
            epochs_stage2=self.epochs_stage2,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            momentum=self.momentum,
            seed=derive_seed(self._root_seed(), "train"),
            precision=self.precision,
        )

    def fit(self, X, y, log=None):
        Xs = check_multimodal(X, self.modality_dims)
        y = column_or_1d(y, warn=True)
        if y.shape[0] != Xs[0].shape[0]:
            raise DimensionError(f"{Xs[0].shape[0]} samples but {y.shape[0]} labels")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        cfg = self.train_config()
        spec = self.fusion_spec()
        self.networks_, self.head_ = nn.build_model(
            [x.shape[1] for x in Xs],
            len(self.classes_),
            spec,
            embedding_dim=self.embedding_dim,
            hidden_dims=tuple(self.hidden_dims),
            joint_dim=self.joint_dim,
            seed=derive_seed(self._root_seed(), "init"),
            dtype=cfg.dtype,
            normalize_embeddings=self.normalize_embeddings,
        )
        self.history_ = nn.train_two_step(self.networks_, self.head_, Xs, y_idx.astype(np.int64), cfg, log=log)
        self.n_modalities_ = len(Xs)
        self.input_dims_ = tuple(x.shape[1] for x in Xs)
        self.n_features_in_ = sum(self.input_dims_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "head_")
        Xs = check_multimodal(X, self.modality_dims or self.input_dims_)
        if len(Xs) != self.n_modalities_:
            raise DimensionError(f"expected {self.n_modalities_} modalities, got {len(Xs)}")
        return nn.predict_proba(self.networks_, self.head_, Xs)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]


class ScoreFusionClassifier(ClassifierMixin, BaseEstimator):
    """Score-level fusion of one unimodal classifier per modality.

    Parameters
    ----------
    rule : {"sum", "majority"}
        ``"sum"`` adds the per-modality probability vectors; ``"majority"``
        takes a plurality vote of per-modality decisions.
    estimator : MultimodalFusionClassifier, default=None
        Template cloned for each modality (``fusion`` is forced to
        ``"concat"``). Defaults to ``MultimodalFusionClassifier()``.
    modality_dims : list of int, default=None
    random_state : int, default=0
    """

    def __init__(self, rule="sum", estimator=None, modality_dims=None, random_state=0):
        self.rule = rule
        self.estimator = estimator
        self.modality_dims = modality_dims
        self.random_state = random_state

    def fit(self, X, y):
        if self.rule not in ("sum", "majority"):
            raise ValueError(f"rule must be 'sum' or 'majority', got {self.rule!r}")
        Xs = check_multimodal(X, self.modality_dims)
        y = column_or_1d(y)
        self.classes_ = np.unique(y)
        template = self.estimator if self.estimator is not None else MultimodalFusionClassifier()
        seed = 0 if self.random_state is None else int(self.random_state)
        self.estimators_ = []
        for i, x in enumerate(Xs):
            est = clone(template).set_params(
                fusion="concat", modality_dims=None, random_state=derive_seed(seed, "unimodal", i)
            )
            self.estimators_.append(est.fit([x], y))
        self.input_dims_ = tuple(x.shape[1] for x in Xs)
        self.n_features_in_ = sum(self.input_dims_)
        return self

    def modality_proba(self, X):
        """Per-modality probability matrices, aligned to ``classes_``."""
        check_is_fitted(self, "estimators_")
        Xs = check_multimodal(X, self.modality_dims or self.input_dims_)
        if len(Xs) != len(self.estimators_):
            raise DimensionError(f"expected {len(self.estimators_)} modalities, got {len(Xs)}")
        out = []
        for est, x in zip(self.estimators_, Xs):
            p = np.zeros((x.shape[0], len(self.classes_)))
            p[:, np.searchsorted(self.classes_, est.classes_)] = est.predict_proba([x])
            out.append(p)
        return out

    def predict(self, X):
        probs = self.modality_proba(X)
        rule = fuse_scores_sum if self.rule == "sum" else fuse_scores_majority
        return self.classes_[rule(probs)]

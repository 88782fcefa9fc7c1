"""JSON checkpoints for :class:`MultimodalFusionClassifier`.

Layout (``format_version`` 1)::

    {
      "format": "fusionsketch-checkpoint",
      "format_version": 1,
      "estimator_params": {...},        # get_params() of the classifier
      "classes": [...],
      "schema": {"modalities": [...], "input_dims": [...]},
      "fusion": {...},                  # FusionSpec.to_dict()
      "sketch_params": [{"subset": [...], "params": [CountSketchParams.to_dict()]}],
      "networks": [[layer, ...], ...],
      "head": {"joint": layer, "classifier": layer, "normalize_embeddings": bool}
    }

A layer is ``{"activation", "weights", "bias"}``; arrays are
``{"dtype", "shape", "data"}`` with ``data`` the base64 of the raw
little-endian bytes, so parameters round-trip exactly. Sketch buckets and
signs are stored explicitly and never re-drawn on load. Keys are sorted, so
equal models produce byte-identical files.
"""
import base64
import json

import numpy as np

from .estimators import MultimodalFusionClassifier
from .exceptions import SchemaError
from .fusion import FusionLayer, FusionSpec
from .nn import DenseLayer, JointHead, ModalityNetwork
from .sketch import CountSketchParams

__all__ = ["FORMAT_VERSION", "save_checkpoint", "load_checkpoint", "dumps", "loads"]

FORMAT = "fusionsketch-checkpoint"
FORMAT_VERSION = 1


def _encode_array(a):
    a = np.ascontiguousarray(a)
    le = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": le.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(le.tobytes()).decode("ascii"),
    }


def _decode_array(d):
    raw = base64.b64decode(d["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"])
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


def _encode_layer(layer):
    return {
        "activation": layer.activation,
        "weights": _encode_array(layer.weights),
        "bias": _encode_array(layer.bias),
    }


def _decode_layer(d):
    return DenseLayer(_decode_array(d["weights"]), _decode_array(d["bias"]), d["activation"])


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def to_dict(clf, modalities=None):
    """Checkpoint mapping of a fitted classifier."""
    head = clf.head_
    if modalities is None:
        modalities = [f"m{i}" for i in range(clf.n_modalities_)]
    if len(modalities) != clf.n_modalities_:
        raise SchemaError("one modality name per input is required")
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "estimator_params": {k: _jsonable(v) for k, v in clf.get_params().items()},
        "classes": _jsonable(clf.classes_.tolist()),
        "schema": {"modalities": list(modalities), "input_dims": list(clf.input_dims_)},
        "fusion": head.fusion.spec.to_dict(),
        "sketch_params": [
            {"subset": list(subset), "params": [p.to_dict() for p in ps]}
            for subset, ps in head.fusion.params.items()
        ],
        "networks": [[_encode_layer(l) for l in net.layers] for net in clf.networks_],
        "head": {
            "joint": _encode_layer(head.joint_layer),
            "classifier": _encode_layer(head.classifier),
            "normalize_embeddings": head.normalize_embeddings,
        },
    }


def from_dict(d):
    """Inverse of :func:`to_dict`; returns ``(classifier, schema)``."""
    if d.get("format") != FORMAT:
        raise SchemaError("not a fusionsketch checkpoint")
    if d.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {d.get('format_version')}")
    params = dict(d["estimator_params"])
    if params.get("hidden_dims") is not None:
        params["hidden_dims"] = tuple(params["hidden_dims"])
    if params.get("subsets") is not None:
        params["subsets"] = [tuple(s) for s in params["subsets"]]
    clf = MultimodalFusionClassifier(**params)
    networks = [ModalityNetwork([_decode_layer(l) for l in net]) for net in d["networks"]]
    spec = FusionSpec.from_dict(d["fusion"])
    sketch_params = {
        tuple(e["subset"]): [CountSketchParams.from_dict(p) for p in e["params"]]
        for e in d["sketch_params"]
    }
    fusion = FusionLayer(spec, [n.embedding_dim for n in networks], sketch_params)
    h = d["head"]
    head = JointHead(fusion, _decode_layer(h["joint"]), _decode_layer(h["classifier"]), h["normalize_embeddings"])
    schema = d["schema"]
    clf.networks_ = networks
    clf.head_ = head
    clf.classes_ = np.array(d["classes"])
    clf.n_modalities_ = len(networks)
    clf.input_dims_ = tuple(schema["input_dims"])
    clf.n_features_in_ = sum(clf.input_dims_)
    clf.history_ = []
    if [n.input_dim for n in networks] != list(clf.input_dims_):
        raise SchemaError("schema input dims disagree with stored networks")
    return clf, schema


def dumps(clf, modalities=None):
    return json.dumps(to_dict(clf, modalities), sort_keys=True, separators=(",", ":")) + "\n"


def loads(text):
    return from_dict(json.loads(text))


def save_checkpoint(clf, path, modalities=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(clf, modalities))


def load_checkpoint(path):
    """Load a checkpoint; returns ``(classifier, schema)``."""
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())

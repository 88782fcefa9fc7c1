"""Rank-one accuracy and score-level fusion rules."""
import numpy as np

from .exceptions import DimensionError

__all__ = ["rank_one_accuracy", "fuse_scores_sum", "fuse_scores_majority"]


def rank_one_accuracy(predictions, truth):
    """Fraction of samples whose top-ranked class equals the true class.

    Parameters
    ----------
    predictions : array-like
        Either predicted labels, shape ``(n,)``, or class scores, shape
        ``(n, n_classes)``. Scores are reduced by argmax, which breaks ties
        toward the lowest class index; labels are then class indices.
    truth : array-like of shape (n,)
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.ndim == 2:
        predictions = predictions.argmax(axis=1)
    if predictions.ndim != 1 or truth.ndim != 1:
        raise DimensionError("predictions and truth must be 1-D label arrays (or 2-D scores)")
    if predictions.shape != truth.shape:
        raise DimensionError(f"{predictions.size} predictions for {truth.size} labels")
    if truth.size == 0:
        raise ValueError("rank-one accuracy of an empty set is undefined")
    return int((predictions == truth).sum()) / truth.size


def _stack(per_modality_probs):
    if len(per_modality_probs) == 0:
        raise ValueError("need at least one modality")
    arrs = [np.asarray(p, dtype=np.float64) for p in per_modality_probs]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise DimensionError(f"probability arrays disagree in shape: {sorted(shapes)}")
    stacked = np.stack(arrs)  # (m, [n,] k)
    return stacked, arrs[0].ndim == 1


def fuse_scores_sum(per_modality_probs):
    """Sum rule: argmax of the element-wise sum of per-modality probabilities.

    Accepts one ``(n_classes,)`` or ``(n, n_classes)`` array per modality and
    returns a label or an array of labels.
    """
    stacked, single = _stack(per_modality_probs)
    labels = stacked.sum(axis=0).argmax(axis=-1)
    return int(labels) if single else labels


def fuse_scores_majority(per_modality_probs):
    """Plurality vote over per-modality argmax labels.

    Ties between equally voted labels go to the highest summed probability,
    then to the lowest class index.
    """
    stacked, single = _stack(per_modality_probs)
    if single:
        stacked = stacked[:, None, :]
    n_mod, n, k = stacked.shape
    votes = stacked.argmax(axis=-1)  # (m, n)
    counts = np.zeros((n, k), dtype=np.int64)
    for m in range(n_mod):
        counts[np.arange(n), votes[m]] += 1
    summed = stacked.sum(axis=0)
    tied = counts == counts.max(axis=1, keepdims=True)
    labels = np.where(tied, summed, -np.inf).argmax(axis=1)
    return int(labels[0]) if single else labels

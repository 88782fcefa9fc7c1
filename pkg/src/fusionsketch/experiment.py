"""Fusion comparison grid: train and score every (method, modality subset) cell."""
import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._random import derive_seed
from .config import FUSION_METHODS, SCORE_METHODS
from .data import compose_sample_set
from .estimators import MultimodalFusionClassifier
from .evaluation import fuse_scores_majority, fuse_scores_sum, rank_one_accuracy
from .exceptions import SchemaError
from .fusion import all_subsets

__all__ = ["ResultRow", "ResultTable", "ExperimentError", "run_experiment", "default_threads", "CSV_HEADER"]

CSV_HEADER = ("method", "subset", "accuracy_mean", "accuracy_std", "n_test", "repetitions")


class ExperimentError(RuntimeError):
    """A grid cell failed; the message names the cell."""


def default_threads():
    env = os.environ.get("FUSIONSKETCH_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n < 1:
            raise ValueError(f"FUSIONSKETCH_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def subset_label(subset):
    return "+".join(str(i) for i in subset)


@dataclass(frozen=True)
class ResultRow:
    method: str
    subset: tuple
    accuracies: tuple
    n_test: int

    @property
    def accuracy_mean(self):
        return float(np.mean(self.accuracies))

    @property
    def accuracy_std(self):
        return float(np.std(self.accuracies))

    @property
    def repetitions(self):
        return len(self.accuracies)


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def get(self, method, subset):
        subset = tuple(subset)
        for r in self.rows:
            if r.method == method and r.subset == subset:
                return r
        raise KeyError((method, subset))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(
                [r.method, subset_label(r.subset), f"{r.accuracy_mean:.6f}", f"{r.accuracy_std:.6f}", r.n_test, r.repetitions]
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def format(self):
        lines = [f"{'method':<14} {'subset':<10} {'accuracy':>9} {'std':>8} {'n_test':>7} {'reps':>4}"]
        for r in self.rows:
            lines.append(
                f"{r.method:<14} {'{' + subset_label(r.subset) + '}':<10} {100 * r.accuracy_mean:>8.2f}% "
                f"{100 * r.accuracy_std:>7.2f}% {r.n_test:>7} {r.repetitions:>4}"
            )
        return "\n".join(lines)


def _ordered(subsets):
    return sorted((tuple(sorted(s)) for s in subsets), key=lambda s: (len(s), s))


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def run_experiment(config, threads=None, log=None):
    """Train and evaluate every configured (method, subset) cell.

    Each repetition draws fresh composed train/test sets (shared by all
    cells of that repetition) and fresh model initialisations. ``unimodal``
    contributes one row per modality used by any subset; ``cnn_sum`` and
    ``cnn_major`` fuse the probabilities of those same unimodal models.
    ``fusion.subsets`` applies to cells over all modalities; smaller cells
    sketch every subset of their own modalities.

    Returns
    -------
    ResultTable
        Rows in configured method order, subsets by size then
        lexicographically; accuracies averaged over repetitions.
    """
    threads = default_threads() if threads is None else int(threads)
    train_pool, test_pool = config.load_pools()
    if test_pool is None:
        raise SchemaError("run_experiment needs a test data source")
    if test_pool.dims != train_pool.dims:
        raise SchemaError(f"train modalities {train_pool.dims} differ from test {test_pool.dims}")
    n_mod = len(train_pool.modalities)
    raw_subsets = config.subsets if config.subsets is not None else all_subsets(n_mod)
    subsets = _ordered(raw_subsets)
    for s in subsets:
        if max(s) >= n_mod:
            raise SchemaError(f"subset {list(s)} out of range for {n_mod} modalities")
    fused_subsets = [s for s in subsets if len(s) >= 2]
    singles = sorted({i for s in subsets for i in s})
    methods = list(config.methods)
    need_unimodal = any(m in ("unimodal", *SCORE_METHODS) for m in methods)

    accs = {}
    n_test = None
    for rep in range(config.repetitions):
        train = compose_sample_set(train_pool, config.data.sets_per_subject, derive_seed(config.seed, "compose-train", rep))
        test = compose_sample_set(test_pool, config.data.test_sets_per_subject, derive_seed(config.seed, "compose-test", rep))
        n_test = len(test)

        classes = np.unique(train.y)

        def model_seed(method, subset):
            return derive_seed(config.seed, "model", rep, method, *subset)

        def fit_score(cell):
            method, subset = cell
            try:
                params = config.classifier_params(fusion="concat" if method == "unimodal" else method)
                if len(subset) != n_mod:
                    # configured sketch subsets index the full modality list
                    params["subsets"] = None
                clf = MultimodalFusionClassifier(**params, random_state=model_seed(method, subset))
                clf.fit([train.X[i] for i in subset], train.y)
                Xt = [test.X[i] for i in subset]
                proba = clf.predict_proba(Xt)
                full = np.zeros((n_test, len(classes)))
                full[:, np.searchsorted(classes, clf.classes_)] = proba
                return full
            except Exception as exc:
                raise ExperimentError(
                    f"cell method={method} subset={{{subset_label(subset)}}} repetition={rep}: {exc}"
                ) from exc

        cells = []
        if need_unimodal:
            cells += [("unimodal", (i,)) for i in singles]
        cells += [(m, s) for m in methods if m in FUSION_METHODS for s in fused_subsets]
        probs = dict(zip(cells, _map(fit_score, cells, threads)))

        def labels_to_acc(pred_idx):
            return rank_one_accuracy(classes[pred_idx], test.y)

        for method in methods:
            if method == "unimodal":
                for i in singles:
                    accs.setdefault((method, (i,)), []).append(labels_to_acc(probs[("unimodal", (i,))].argmax(1)))
            elif method in SCORE_METHODS:
                rule = fuse_scores_sum if method == "cnn_sum" else fuse_scores_majority
                for s in fused_subsets:
                    pred = rule([probs[("unimodal", (i,))] for i in s])
                    accs.setdefault((method, s), []).append(labels_to_acc(pred))
            else:
                for s in fused_subsets:
                    accs.setdefault((method, s), []).append(labels_to_acc(probs[(method, s)].argmax(1)))
        if log is not None:
            log(f"repetition {rep + 1}/{config.repetitions} done")

    rows = []
    for method in methods:
        keys = [(method, (i,)) for i in singles] if method == "unimodal" else [(method, s) for s in fused_subsets]
        rows += [ResultRow(m, s, tuple(accs[(m, s)]), n_test) for m, s in keys]
    return ResultTable(rows)

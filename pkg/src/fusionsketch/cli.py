"""Command-line interface: ``fusionsketch <command> [options]``.

Commands
--------
train       fit one classifier from a config; writes checkpoint.json and metrics.json
evaluate    score a checkpoint on composed sets; prints a table, writes evaluation.csv
experiment  run the full (method, subset) grid; writes results.csv
gradcheck   finite-difference check of every backward pass
bench       explicit bilinear vs tensor sketch size and speed; writes bench.csv
synth       write a synthetic train/test pool as JSON lines

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
``FUSIONSKETCH_THREADS`` caps the number of concurrently trained grid cells.
BLAS always runs single-threaded so results never depend on that setting.
"""
import argparse
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from ._random import derive_seed
from .bench import bench_csv, run_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config, load_synth_spec
from .data import compose_sample_set, generate_synthetic, load_embeddings, save_embeddings
from .evaluation import rank_one_accuracy
from .exceptions import DataError, FusionConfigError
from .experiment import ResultRow, ResultTable, default_threads, run_experiment
from .gradcheck import TOLERANCE, run_gradcheck
from .estimators import MultimodalFusionClassifier

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
MAX_GRADCHECK_DIM = 32
DEFAULT_OUT = Path("runs")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="JSON config (spec file for synth)")
    parser.add_argument("--out", type=Path, default=default, help="output directory")
    parser.add_argument("--seed", type=int, default=default, help="global seed (overrides config)")
    parser.add_argument("--repetitions", type=int, default=default, help="repetitions (overrides config)")


def build_parser():
    parser = argparse.ArgumentParser(prog="fusionsketch", description="Compact bilinear multimodal fusion.")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    sub.add_parser("train", parents=[common], help="train one classifier")

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="JSON-lines embeddings (default: the config's test data)")
    p.add_argument("--sets-per-subject", type=int, default=None)

    sub.add_parser("experiment", parents=[common], help="run the method x subset grid")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--sizes", type=_int_list, default=(4, 3, 5), help="modality dims, e.g. 4,3,5")
    p.add_argument("--sketch-dim", type=int, default=8)
    p.add_argument("--corrupt-signs", action="store_true", help="negative control: corrupt sketch signs")

    p = sub.add_parser("bench", parents=[common], help="bilinear vs tensor sketch benchmark")
    p.add_argument("--dims", type=_int_list, default=(1024, 1024))
    p.add_argument("--sketch-dim", type=int, default=4096)
    p.add_argument("--repeats", type=int, default=5)

    sub.add_parser("synth", parents=[common], help="write a synthetic embedding pool")
    return parser


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _out_dir(args, config=None):
    out = args.out or (config.output.dir if config is not None else DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, required=True):
    if args.config is None:
        if required:
            raise UsageError("--config is required")
        return None
    if args.repetitions is not None and args.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    return load_config(args.config, seed=args.seed, repetitions=args.repetitions)


def cmd_train(args):
    config = _config(args)
    train_pool, test_pool = config.load_pools()
    out = _out_dir(args, config)
    n_mod = len(train_pool.modalities)
    kind = config.fusion.kind
    train = compose_sample_set(train_pool, config.data.sets_per_subject, derive_seed(config.seed, "compose-train", 0))
    clf = MultimodalFusionClassifier(
        **config.classifier_params(), random_state=derive_seed(config.seed, "model", 0, kind, *range(n_mod))
    )
    clf.fit(train.X, train.y, log=lambda m: print(f"stage {m.stage} epoch {m.epoch}: loss {m.loss:.6f} acc {m.accuracy:.4f}"))
    metrics = {
        "method": kind,
        "modalities": list(train_pool.modalities),
        "seed": config.seed,
        "n_train": len(train),
        "history": [{"stage": m.stage, "epoch": m.epoch, "loss": m.loss, "accuracy": m.accuracy} for m in clf.history_],
        "train_accuracy": rank_one_accuracy(clf.predict(train.X), train.y),
    }
    if test_pool is not None:
        test = compose_sample_set(test_pool, config.data.test_sets_per_subject, derive_seed(config.seed, "compose-test", 0))
        metrics["n_test"] = len(test)
        metrics["test_accuracy"] = rank_one_accuracy(clf.predict(test.X), test.y)
        print(f"held-out rank-one accuracy: {100 * metrics['test_accuracy']:.2f}%")
    save_checkpoint(clf, out / "checkpoint.json", modalities=list(train_pool.modalities))
    _write_text(out / "metrics.json", json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    print(f"wrote {out / 'checkpoint.json'} and {out / 'metrics.json'}")
    return EXIT_OK


def cmd_evaluate(args):
    config = _config(args, required=args.data is None)
    try:
        clf, schema = load_checkpoint(args.checkpoint)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    if args.data is not None:
        pool = load_embeddings(args.data)
    else:
        train_pool, test_pool = config.load_pools()
        pool = test_pool if test_pool is not None else train_pool
    if list(pool.modalities) != list(schema["modalities"]) or [pool.dims[m] for m in pool.modalities] != list(
        schema["input_dims"]
    ):
        raise DataError(
            f"data modalities {dict(pool.dims)} do not match checkpoint schema "
            f"{dict(zip(schema['modalities'], schema['input_dims']))}"
        )
    seed = args.seed if args.seed is not None else (config.seed if config is not None else 0)
    per_subject = args.sets_per_subject
    if per_subject is None:
        per_subject = config.data.test_sets_per_subject if config is not None else 250
    if per_subject < 1:
        raise UsageError("--sets-per-subject must be >= 1")
    test = compose_sample_set(pool, per_subject, derive_seed(seed, "compose-test", 0))
    acc = rank_one_accuracy(clf.predict(test.X), test.y)
    table = ResultTable([ResultRow(clf.fusion, tuple(range(len(test.X))), (acc,), len(test))])
    print(table.format())
    out = _out_dir(args, config)
    table.to_csv(out / "evaluation.csv")
    return EXIT_OK


def cmd_experiment(args):
    config = _config(args)
    out = _out_dir(args, config)
    table = run_experiment(config, threads=default_threads(), log=print)
    print(table.format())
    table.to_csv(out / "results.csv")
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


def cmd_gradcheck(args):
    sizes = args.sizes
    if len(sizes) < 2 or min(sizes) < 1 or max(sizes) > MAX_GRADCHECK_DIM:
        raise UsageError(f"--sizes needs at least two dims in 1..{MAX_GRADCHECK_DIM}, got {list(sizes)}")
    if not 1 <= args.sketch_dim <= 4 * MAX_GRADCHECK_DIM:
        raise UsageError(f"--sketch-dim must be in 1..{4 * MAX_GRADCHECK_DIM}")
    report = run_gradcheck(args.seed or 0, sizes, args.sketch_dim, corrupt=args.corrupt_signs)
    failed = []
    for name, err in report.items():
        ok = err < TOLERANCE
        print(f"{name:<24} {err:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradcheck failed (tolerance {TOLERANCE:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_bench(args):
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    if len(args.dims) < 2 or min(args.dims) < 1 or args.sketch_dim < 1:
        raise UsageError("--dims needs at least two positive dims and --sketch-dim must be positive")
    rows = run_bench(args.dims, args.sketch_dim, args.repeats, seed=args.seed or 0)
    for r in rows:
        t = "-" if r.status != "ok" else f"{1e3 * r.seconds_min:.3f} ms"
        print(f"{r.arm:<14} values {r.output_values:>10}  bytes {r.output_bytes:>10}  time {t}  {r.status}")
    out = _out_dir(args)
    bench_csv(rows, out / "bench.csv")
    print(f"wrote {out / 'bench.csv'}")
    return EXIT_OK


def cmd_synth(args):
    if args.config is None:
        raise UsageError("--config (a synthetic data spec) is required")
    spec = load_synth_spec(args.config, seed=args.seed)
    train, test = generate_synthetic(spec)
    out = _out_dir(args)
    save_embeddings(train, out / "train.jsonl")
    save_embeddings(test, out / "test.jsonl")
    print(f"wrote {out / 'train.jsonl'} and {out / 'test.jsonl'}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    for name in ("config", "out", "seed", "repetitions"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        default_threads()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DataError, FusionConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure: report, do not dump a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

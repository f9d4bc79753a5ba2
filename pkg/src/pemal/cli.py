"""Command-line pipeline: extract, vectorize, train, eval, ablate, report.

Every artifact-producing command writes a ``<output>.manifest.json``
recording the full configuration, the seed, SHA-256 hashes of the inputs,
and library versions.  With the default single-thread configuration, a
rerun with the same manifest produces byte-identical outputs.

Exit codes: 0 success, 64 usage error, 2 I/O error, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataset, features, pe
from .ablation import ABLATION_LEVELS, FeatureMask, run_ablation, slice_features
from .errors import (CorruptCache, CorruptModelFile, DegenerateLabels, DimensionError,
                     DimensionMismatch, EmptyDataset, EmptyMask, MalformedPE,
                     NonBinaryLabels, ParseError)
from .metrics import compute_report
from .models import TrainConfig, load_model, make_classifier, save_model
from .scaling import FeatureScaler

EXIT_OK = 0
EXIT_IO = 2
EXIT_DATA = 3
EXIT_USAGE = 64

_DATA_ERRORS = (ParseError, DimensionError, CorruptCache, CorruptModelFile, EmptyDataset,
                NonBinaryLabels, DimensionMismatch, DegenerateLabels, EmptyMask,
                MalformedPE, ValueError)

log = logging.getLogger("pemal")


class _Parser(argparse.ArgumentParser):
    """argparse with BSD-style exit code 64 for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(EXIT_USAGE, f"{self.prog}: error: {message}")


class SystemExit2(SystemExit):
    def __init__(self, code, message=""):
        super().__init__(code)
        self.message = message


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(output: Path, command: str, args: argparse.Namespace,
                    inputs: list[Path]) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v)
              for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "versions": {
            "pemal": __version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
            "numpy": np.__version__,
        },
    }
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _collect_files(inputs: list[str]) -> list[Path]:
    files: list[Path] = []
    for spec in inputs:
        path = Path(spec)
        if path.is_file():
            files.append(path)
        elif path.is_dir():
            files.extend(p for p in sorted(path.rglob("*")) if p.is_file())
        else:
            raise FileNotFoundError(f"input path does not exist: {spec}")
    return sorted(set(files))


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                       epochs=args.epochs, seed=args.seed, optimizer=args.optimizer,
                       init=args.init)


def _subsample(ds: dataset.LabeledDataset, take: int | None, take_test: int | None,
               seed: int) -> dataset.LabeledDataset:
    if take is None and take_test is None:
        return ds
    rng = np.random.default_rng(seed)
    keep = np.ones(len(ds), dtype=bool)
    for split_code, cap in ((dataset.SPLIT_TRAIN, take), (dataset.SPLIT_TEST, take_test)):
        if cap is None:
            continue
        rows = np.nonzero(ds.split == split_code)[0]
        if rows.shape[0] > cap:
            keep[rows] = False
            keep[rng.choice(rows, size=cap, replace=False)] = True
    return ds.subset(np.nonzero(keep)[0])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _map_rows(fn, blobs: list[bytes], threads: int) -> list:
    # Rows are independent; output order follows input order either way.
    if threads > 1 and len(blobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, blobs, chunksize=8))
    return [fn(blob) for blob in blobs]


def cmd_extract(args) -> int:
    files = _collect_files(args.inputs)
    output = Path(args.output)
    blobs = []
    for path in files:
        data = path.read_bytes()
        try:
            pe.parse_pe(data)
        except MalformedPE as exc:
            log.warning("malformed PE %s: %s", path, exc)
        blobs.append(data)

    if args.format == "cache":
        rows = _map_rows(features.vectorize, blobs, args.threads)
        X = np.vstack([row.astype(np.float32) for row in rows]) \
            if rows else np.zeros((0, features.TOTAL_DIM), dtype=np.float32)
        ds = dataset.LabeledDataset(
            X=X,
            y=np.full(len(blobs), dataset.LABEL_UNLABELED, dtype=np.int8),
            split=np.zeros(len(blobs), dtype=np.uint8),
            ids=[hashlib.sha256(data).hexdigest() for data in blobs],
        )
        dataset.write_cache(ds, output)
    else:
        payloads = _map_rows(features.raw_record if args.raw else features.vectorize,
                             blobs, args.threads)
        with open(output, "w", encoding="utf-8") as fh:
            for path, data, payload in zip(files, blobs, payloads):
                row = {"path": str(path), "sha256": hashlib.sha256(data).hexdigest(),
                       "label": dataset.LABEL_UNLABELED}
                if args.raw:
                    row.update(payload)
                else:
                    row["features"] = payload.tolist()
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_manifest(output, "extract", args, files)
    log.info("extracted %d files -> %s", len(blobs), output)
    return EXIT_OK


def cmd_vectorize(args) -> int:
    if not args.train and not args.test:
        raise SystemExit2(EXIT_USAGE, "pemal vectorize: error: provide --train and/or --test")
    parts = []
    inputs = []
    for split_name, paths in (("train", args.train), ("test", args.test)):
        for spec in paths:
            path = Path(spec)
            if not path.is_file():
                raise FileNotFoundError(f"input path does not exist: {spec}")
            inputs.append(path)
            parts.append(dataset.load_jsonl(path, mode=args.mode, default_split=split_name))
    ds = dataset.concat(parts)
    dataset.write_cache(ds, args.output)
    _write_manifest(Path(args.output), "vectorize", args, inputs)
    log.info("wrote cache with %d rows -> %s", len(ds), args.output)
    return EXIT_OK


def _load_split(args, split_code: int) -> tuple[np.ndarray, np.ndarray]:
    path = Path(args.input)
    if not path.is_file():
        raise FileNotFoundError(f"input path does not exist: {args.input}")
    ds = dataset.filter_labeled(dataset.read_cache(path))
    ds = _subsample(ds, getattr(args, "take", None), getattr(args, "take_test", None),
                    args.seed)
    rows = np.nonzero(ds.split == split_code)[0]
    part = ds.subset(rows)
    if len(part) == 0:
        raise EmptyDataset(f"no labeled rows with split code {split_code} in {args.input}")
    return part.X.astype(np.float64), part.y.astype(np.int64)


def cmd_train(args) -> int:
    mask = FeatureMask.parse(args.mask)
    X, y = _load_split(args, dataset.SPLIT_TRAIN)
    X = slice_features(X, mask)
    config = _train_config(args)
    scaler = FeatureScaler().fit(X)
    clf = make_classifier(args.kind, config, k=args.k)
    clf.fit(scaler.transform(X), y)
    save_model(args.output, clf, scaler, list(mask.included))
    _write_manifest(Path(args.output), "train", args, [Path(args.input)])
    log.info("trained %s on %d rows (mask %s) -> %s", args.kind, X.shape[0], mask.name,
             args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    if not model_path.is_file():
        raise FileNotFoundError(f"model file does not exist: {args.model}")
    clf, scaler, mask_names = load_model(model_path)
    split_code = dataset.SPLIT_TEST if args.split == "test" else dataset.SPLIT_TRAIN
    X, y = _load_split(args, split_code)
    X = slice_features(X, FeatureMask(mask_names))
    scores = clf.predict_proba(scaler.transform(X))[:, 1]
    report = compute_report(scores, y, threshold=args.threshold)
    Path(args.output).write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    _write_manifest(Path(args.output), "eval", args, [Path(args.input), model_path])
    print(report.to_json())
    return EXIT_OK


def _parse_levels(spec: str) -> list:
    levels = []
    for part in spec.split(","):
        part = part.strip().lower()
        if not part:
            continue
        if part == "all":
            levels.append("all")
        elif "-" in part:
            lo, hi = part.split("-", 1)
            levels.extend(range(int(lo), int(hi) + 1))
        else:
            levels.append(int(part))
    for level in levels:
        if level not in ABLATION_LEVELS:
            raise ValueError(f"level must be one of {ABLATION_LEVELS}, got {level!r}")
    if not levels:
        raise ValueError("no ablation levels requested")
    return levels


def cmd_ablate(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise FileNotFoundError(f"input path does not exist: {args.input}")
    ds = dataset.filter_labeled(dataset.read_cache(path))
    ds = _subsample(ds, args.take, args.take_test, args.seed)
    levels = _parse_levels(args.levels)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    report = run_ablation(ds, levels, models=models, config=_train_config(args),
                          n_workers=args.threads)
    output = Path(args.output)
    report.to_csv(output, include_timing=args.timings)
    json_path = output.with_suffix(".json")
    json_path.write_text(
        json.dumps(report.to_json_obj(include_timing=args.timings), sort_keys=True, indent=2)
        + "\n", encoding="utf-8")
    _write_manifest(output, "ablate", args, [path])
    print(report.render_table())
    for row in report.rows:
        log.info("row %s/%s took %.2fs%s", row.mask, row.model, row.train_seconds,
                 f" (failed: {row.error})" if row.error else "")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise FileNotFoundError(f"input path does not exist: {args.input}")
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines:
        raise ValueError(f"empty report CSV: {args.input}")
    header = lines[0].split(",")
    out = ["| " + " | ".join(header) + " |",
           "|" + "|".join([" --- "] * len(header)) + "|"]
    out += ["| " + " | ".join(line.split(",")) + " |" for line in lines[1:]]
    text = "\n".join(out) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        _write_manifest(Path(args.output), "report", args, [path])
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--init", choices=("xavier", "normal"), default="xavier")
    p.add_argument("--k", type=int, default=5, help="neighbors for the knn model")
    p.add_argument("--take", type=int, default=None,
                   help="subsample the train split to at most N rows")
    p.add_argument("--take-test", type=int, default=None,
                   help="subsample the test split to at most N rows")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pemal",
                     description="Static PE malware features, classifiers, and ablation.")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker/BLAS thread budget (default 1, reproducible)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract feature vectors from PE files")
    p.add_argument("inputs", nargs="+", help="PE files or directories")
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("jsonl", "cache"), default="jsonl")
    p.add_argument("--raw", action="store_true",
                   help="emit raw feature groups instead of vectors (jsonl only)")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("vectorize", help="convert JSONL records into a binary cache")
    p.add_argument("--train", action="append", default=[], help="JSONL tagged as train split")
    p.add_argument("--test", action="append", default=[], help="JSONL tagged as test split")
    p.add_argument("--mode", choices=("raw", "prevectorized"), default="raw")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("train", help="train a classifier on the cached train split")
    p.add_argument("--input", required=True, help="binary feature cache")
    p.add_argument("--output", required=True, help="model file to write")
    p.add_argument("--kind", choices=("mlp", "logistic", "knn"), default="mlp")
    p.add_argument("--mask", default="ALL", help="feature mask, e.g. BH_SE_IM")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model file on the cached test split")
    p.add_argument("--input", required=True, help="binary feature cache")
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True, help="metrics JSON to write")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--take", type=int, default=None)
    p.add_argument("--take-test", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the feature-set ablation sweep")
    p.add_argument("--input", required=True, help="binary feature cache")
    p.add_argument("--output", required=True, help="report CSV to write (JSON written beside)")
    p.add_argument("--levels", default="1", help="e.g. '1', '1-3', '2,5', 'all'")
    p.add_argument("--models", default="mlp", help="comma-separated: mlp,logistic,knn")
    p.add_argument("--timings", action="store_true",
                   help="embed wall-clock training times in the report "
                        "(costs rerun byte-identity)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render a report CSV as a markdown table")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None, help="markdown file (default: stdout)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit2 as exc:
        if exc.message:
            print(exc.message, file=sys.stderr)
        return int(exc.code)
    except SystemExit as exc:      # --help
        return int(exc.code or 0)

    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except SystemExit2 as exc:
        if exc.message:
            print(exc.message, file=sys.stderr)
        return int(exc.code)
    except OSError as exc:
        print(f"pemal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _DATA_ERRORS as exc:
        print(f"pemal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

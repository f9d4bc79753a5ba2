#!/usr/bin/env python3
"""Logistic-regression baseline on a labeled subsample of EMBER v2 JSONL files.

Full-scale EMBER results (900k training rows) are not reproducible at desk
scale, so this script trains on a seeded 20k-row labeled subsample instead
and prints the resulting metrics next to the published full-scale logistic
accuracy (0.8737) for a qualitative sanity check.  No tolerance is applied:
a subsample model is expected to land below the full-scale number.

Usage:
    python3 scripts/ember_logistic_baseline.py \
        --train-jsonl /data/ember2018/train_features_*.jsonl \
        --test-jsonl  /data/ember2018/test_features.jsonl

The JSONL files are the raw EMBER v2 records (one JSON object per file with
the per-feature-set groups); vectorization happens while loading.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from pemal.dataset import SPLIT_TEST, SPLIT_TRAIN, concat, filter_labeled, load_jsonl
from pemal.metrics import compute_report
from pemal.models import LogisticMalware
from pemal.scaling import fit_scaler

REFERENCE_FULL_SCALE_ACC = 0.8737   # published full-EMBER logistic-regression accuracy


def subsample(X, y, cap, seed):
    if X.shape[0] <= cap:
        return X, y
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(X.shape[0], size=cap, replace=False))
    return X[keep], y[keep]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--train-jsonl", nargs="+", required=True,
                        help="EMBER v2 raw training JSONL file(s)")
    parser.add_argument("--test-jsonl", nargs="+", required=True,
                        help="EMBER v2 raw test JSONL file(s)")
    parser.add_argument("--take", type=int, default=20000,
                        help="labeled training rows to keep (default 20000)")
    parser.add_argument("--take-test", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--optimizer", choices=("adam", "sgd"), default="sgd")
    parser.add_argument("--lr", type=float, default=0.5)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--batch-size", type=int, default=512)
    args = parser.parse_args(argv)

    print("loading train records ...", file=sys.stderr)
    train = filter_labeled(concat(load_jsonl(p, mode="raw", default_split="train")
                                  for p in args.train_jsonl))
    test = filter_labeled(concat(load_jsonl(p, mode="raw", default_split="test")
                                 for p in args.test_jsonl))
    X_train = train.X[train.split == SPLIT_TRAIN].astype(np.float64)
    y_train = train.y[train.split == SPLIT_TRAIN].astype(np.int64)
    X_test = test.X[test.split == SPLIT_TEST].astype(np.float64)
    y_test = test.y[test.split == SPLIT_TEST].astype(np.int64)
    X_train, y_train = subsample(X_train, y_train, args.take, args.seed)
    X_test, y_test = subsample(X_test, y_test, args.take_test, args.seed)
    print(f"training on {X_train.shape[0]} rows, evaluating on {X_test.shape[0]}",
          file=sys.stderr)

    scaler = fit_scaler(X_train)
    clf = LogisticMalware(learning_rate=args.lr, epochs=args.epochs,
                          batch_size=args.batch_size, seed=args.seed,
                          optimizer=args.optimizer)
    clf.fit(scaler.transform(X_train), y_train)
    scores = clf.predict_proba(scaler.transform(X_test))[:, 1]
    report = compute_report(scores, y_test)

    print(report.to_json(indent=2))
    print(f"subsample logistic accuracy:            {report.acc:.4f}")
    print(f"published full-scale logistic accuracy: {REFERENCE_FULL_SCALE_ACC:.4f}")
    print("(qualitative comparison only; subsample models train on a fraction of the data)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Seeded synthetic datasets shaped like real feature caches."""

from __future__ import annotations

import numpy as np

from pemal.dataset import LabeledDataset, SPLIT_TEST, SPLIT_TRAIN
from pemal.features import FEATURE_RANGES, TOTAL_DIM


def synthetic_dataset(n_train=500, n_test=200, n_informative=20, separation=4.0,
                      seed=0, informative_set="SE") -> LabeledDataset:
    """Unit-variance noise everywhere except ``n_informative`` columns inside
    one feature set, where the malicious class is shifted by ``separation``
    standard deviations."""
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    X = rng.normal(0.0, 1.0, size=(n, TOTAL_DIM))
    y = rng.integers(0, 2, size=n)
    start, stop = FEATURE_RANGES[informative_set]
    assert start + n_informative <= stop
    X[:, start:start + n_informative] += separation * y[:, None]
    split = np.array([SPLIT_TRAIN] * n_train + [SPLIT_TEST] * n_test, dtype=np.uint8)
    return LabeledDataset(X=X.astype(np.float32), y=y.astype(np.int8), split=split)

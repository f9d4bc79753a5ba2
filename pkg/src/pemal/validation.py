"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, NonBinaryLabels


def as_matrix(X, n_cols: int | None = None, allow_empty: bool = False) -> np.ndarray:
    """Coerce ``X`` to a 2-D float64 array, optionally enforcing a column count."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got ndim={X.ndim}")
    if not allow_empty and X.shape[0] == 0:
        raise EmptyDataset("at least one row is required")
    if n_cols is not None and X.shape[1] != n_cols:
        raise DimensionMismatch(f"expected {n_cols} columns, got {X.shape[1]}")
    return X


def as_binary_labels(y, n_rows: int | None = None) -> np.ndarray:
    """Coerce ``y`` to an int64 vector of {0, 1} labels."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise NonBinaryLabels(f"labels must be 1-D, got ndim={y.ndim}")
    if y.shape[0] == 0:
        raise EmptyDataset("at least one label is required")
    values = np.unique(y)
    if not np.all(np.isin(values, (0, 1))):
        raise NonBinaryLabels(f"labels must be in {{0, 1}}, got values {values.tolist()}")
    if n_rows is not None and y.shape[0] != n_rows:
        raise DimensionMismatch(f"got {y.shape[0]} labels for {n_rows} rows")
    return y.astype(np.int64)


def as_scores(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise DimensionMismatch(f"scores must be 1-D, got ndim={scores.ndim}")
    return scores

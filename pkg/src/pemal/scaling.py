"""Per-column standardization fit on training data.

The nine feature sets span wildly different ranges (probabilities next to
multi-gigabyte sizes), so every model input goes through z-scoring first:
``x' = (x - mean) / stddev`` with per-column statistics estimated on the
training split only.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .validation import as_matrix

# Columns with stddev below this are treated as constant and left centered only.
STD_EPSILON = 1e-8


class FeatureScaler:
    """sklearn-style transformer: fit per-column mean and population stddev, then z-score.

    Constant columns (stddev < ``STD_EPSILON``) get a divisor of exactly 1 so
    their scaled output is 0 rather than an amplified rounding artifact.
    """

    def __init__(self):
        self.mean_: np.ndarray | None = None
        self.scale_: np.ndarray | None = None

    def fit(self, X, y=None) -> "FeatureScaler":
        X = as_matrix(X)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = std < STD_EPSILON
        # Snap constant columns onto their value: summation rounding in the
        # mean would otherwise leave a tiny nonzero residue after centering.
        mean[constant] = X[0, constant]
        std[constant] = 1.0
        self.mean_ = mean
        self.scale_ = std
        return self

    def transform(self, X) -> np.ndarray:
        if self.mean_ is None or self.scale_ is None:
            raise RuntimeError("FeatureScaler must be fit before transform")
        X = as_matrix(X, allow_empty=True)
        if X.shape[1] != self.mean_.shape[0]:
            raise DimensionMismatch(
                f"scaler was fit on {self.mean_.shape[0]} columns, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)

    def get_params(self, deep=True) -> dict:
        return {}

    def set_params(self, **params) -> "FeatureScaler":
        if params:
            raise ValueError(f"FeatureScaler takes no parameters, got {sorted(params)}")
        return self

    def to_dict(self) -> dict:
        if self.mean_ is None or self.scale_ is None:
            raise RuntimeError("FeatureScaler must be fit before serialization")
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_arrays(cls, mean: np.ndarray, scale: np.ndarray) -> "FeatureScaler":
        scaler = cls()
        scaler.mean_ = np.asarray(mean, dtype=np.float64)
        scaler.scale_ = np.asarray(scale, dtype=np.float64)
        return scaler


def fit_scaler(X) -> FeatureScaler:
    """Fit a :class:`FeatureScaler` on training rows."""
    return FeatureScaler().fit(X)

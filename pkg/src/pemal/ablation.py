"""Feature-set ablation: train and evaluate on subsets of the nine feature sets.

The sweep enumerates masks at five levels.  All nine singletons and all 36
pairs are run; combinations of three or more are restricted to the five
sets that dominate the smaller experiments (BH, BE, ST, SE, IM), giving 10
triples, 5 quadruples, and the single quintuple.  Each (mask, model) row
slices the columns, refits the scaler on the sliced training columns,
trains from scratch, and evaluates on the test split.

Rows are independent: a failing fit is recorded as an error on its row and
the sweep continues.  Row results are assembled in canonical order and the
report is sorted by accuracy descending, so a fixed seed yields an
identical report regardless of worker scheduling.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sklearn.base import clone

from .dataset import LabeledDataset, SPLIT_TEST, SPLIT_TRAIN
from .errors import EmptyMask
from .features import FEATURE_DIMS, FEATURE_ORDER, FEATURE_RANGES
from .metrics import MetricsReport, compute_report
from .models import TrainConfig, make_classifier
from .scaling import FeatureScaler

__all__ = [
    "FeatureMask", "AblationRow", "AblationReport",
    "slice_features", "enumerate_subsets", "run_ablation",
    "CORE_FIVE", "ABLATION_LEVELS",
]

log = logging.getLogger(__name__)

# The five sets carried into the 3+ -way combinations.
CORE_FIVE = ("BH", "BE", "ST", "SE", "IM")

ABLATION_LEVELS = (1, 2, 3, 4, 5, "all")


@dataclass(frozen=True)
class FeatureMask:
    """A subset of the nine feature sets, kept in canonical layout order."""

    included: tuple[str, ...]

    def __init__(self, included):
        requested = set()
        for abbr in included:
            if abbr not in FEATURE_DIMS:
                raise ValueError(f"unknown feature set {abbr!r}, expected one of {FEATURE_ORDER}")
            requested.add(abbr)
        if not requested:
            raise EmptyMask("a feature mask needs at least one feature set")
        canonical = tuple(abbr for abbr in FEATURE_ORDER if abbr in requested)
        object.__setattr__(self, "included", canonical)

    @property
    def name(self) -> str:
        return "_".join(self.included)

    @property
    def width(self) -> int:
        return sum(FEATURE_DIMS[abbr] for abbr in self.included)

    @property
    def ranges(self) -> list[tuple[int, int]]:
        return [FEATURE_RANGES[abbr] for abbr in self.included]

    def columns(self) -> np.ndarray:
        return np.concatenate([np.arange(start, stop) for start, stop in self.ranges])

    @classmethod
    def parse(cls, spec: str) -> "FeatureMask":
        """Parse an underscore-joined mask name such as ``"BH_SE_IM"`` ("ALL" = all nine)."""
        if spec.strip().upper() == "ALL":
            return cls(FEATURE_ORDER)
        return cls(tuple(part.strip().upper() for part in spec.split("_") if part.strip()))


def slice_features(X, mask) -> np.ndarray:
    """Columns of the included sets, concatenated in canonical layout order."""
    if not isinstance(mask, FeatureMask):
        mask = FeatureMask(mask)
    X = np.asarray(X)
    return np.concatenate([X[:, start:stop] for start, stop in mask.ranges], axis=1)


def enumerate_subsets(level) -> list[FeatureMask]:
    """Masks for one ablation level: 1 -> 9 singles, 2 -> 36 pairs, 3/4/5 ->
    10/5/1 combinations of the core five, "all" -> the full nine-set mask."""
    if level == "all":
        return [FeatureMask(FEATURE_ORDER)]
    if level == 1:
        return [FeatureMask((abbr,)) for abbr in FEATURE_ORDER]
    if level == 2:
        return [FeatureMask(pair) for pair in combinations(FEATURE_ORDER, 2)]
    if level in (3, 4, 5):
        return [FeatureMask(combo) for combo in combinations(CORE_FIVE, level)]
    raise ValueError(f"level must be one of {ABLATION_LEVELS}, got {level!r}")


@dataclass
class AblationRow:
    mask: str
    model: str
    metrics: MetricsReport | None = None
    train_seconds: float = 0.0
    error: str | None = None


CSV_COLUMNS = ("mask", "model", "acc", "auc", "tpr_at_1pct_fpr", "partial_auc_1pct",
               "precision", "recall", "f1", "train_seconds")


@dataclass
class AblationReport:
    """Sweep results, sorted by accuracy descending (failed rows last)."""

    rows: list[AblationRow] = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (-(r.metrics.acc if r.metrics else -1.0), r.mask, r.model))

    def csv_lines(self, include_timing: bool = False) -> list[str]:
        # Timings are wall-clock and vary across reruns; they are written only
        # on request so default artifacts are byte-reproducible.
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            if row.metrics is None:
                cells = [row.mask, row.model] + [""] * 7
            else:
                m = row.metrics
                cells = [row.mask, row.model] + [
                    str(v) for v in (m.acc, m.auc, m.tpr_at_1pct_fpr, m.partial_auc_1pct,
                                     m.precision, m.recall, m.f1)]
            cells.append(str(row.train_seconds) if include_timing else "0.0")
            lines.append(",".join(cells))
        return lines

    def to_csv(self, path, include_timing: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.csv_lines(include_timing)) + "\n")

    def to_json_obj(self, include_timing: bool = False) -> dict:
        return {
            "rows": [
                {
                    "mask": row.mask,
                    "model": row.model,
                    "metrics": row.metrics.to_dict() if row.metrics else None,
                    "train_seconds": row.train_seconds if include_timing else 0.0,
                    "error": row.error,
                }
                for row in self.rows
            ]
        }

    def render_table(self) -> str:
        header = f"{'mask':<28} {'model':<9} {'acc':>8} {'auc':>8} {'tpr@1%':>8} {'f1':>8}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            if row.metrics is None:
                lines.append(f"{row.mask:<28} {row.model:<9} failed: {row.error}")
            else:
                m = row.metrics
                lines.append(f"{row.mask:<28} {row.model:<9} {m.acc:>8.4f} {m.auc:>8.4f} "
                             f"{m.tpr_at_1pct_fpr:>8.4f} {m.f1:>8.4f}")
        return "\n".join(lines)


def _resolve_model(spec, config: TrainConfig):
    """A (name, unfitted estimator) pair from a kind name or an estimator prototype."""
    if isinstance(spec, str):
        return spec, make_classifier(spec, config)
    return type(spec).__name__, clone(spec)


def _run_row(mask: FeatureMask, model_spec, config: TrainConfig,
             X_train, y_train, X_test, y_test) -> AblationRow:
    name, clf = _resolve_model(model_spec, config)
    row = AblationRow(mask=mask.name, model=name)
    started = time.perf_counter()
    try:
        scaler = FeatureScaler().fit(slice_features(X_train, mask))
        clf.fit(scaler.transform(slice_features(X_train, mask)), y_train)
        scores = clf.predict_proba(scaler.transform(slice_features(X_test, mask)))[:, 1]
        row.metrics = compute_report(scores, y_test)
    except Exception as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("ablation row %s/%s failed: %s", mask.name, name, row.error)
    row.train_seconds = time.perf_counter() - started
    return row


def run_ablation(ds: LabeledDataset, levels, models=("mlp",),
                 config: TrainConfig | None = None, n_workers: int = 1) -> AblationReport:
    """Run the sweep over every (mask, model) pair for the requested levels.

    ``ds`` must already be label-filtered and carry train/test split tags.
    ``models`` entries are kind names ("mlp", "logistic", "knn") or unfitted
    sklearn-style estimator prototypes, cloned per row.
    """
    config = config or TrainConfig()
    train = ds.split == SPLIT_TRAIN
    test = ds.split == SPLIT_TEST
    X_train = ds.X[train].astype(np.float64)
    y_train = ds.y[train].astype(np.int64)
    X_test = ds.X[test].astype(np.float64)
    y_test = ds.y[test].astype(np.int64)

    jobs = [(mask, model) for level in levels for mask in enumerate_subsets(level)
            for model in models]
    report = AblationReport()
    if n_workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_run_row, mask, model, config,
                                   X_train, y_train, X_test, y_test)
                       for mask, model in jobs]
            report.rows = [f.result() for f in futures]
    else:
        for mask, model in jobs:
            report.rows.append(_run_row(mask, model, config,
                                        X_train, y_train, X_test, y_test))
    report.sort()
    return report

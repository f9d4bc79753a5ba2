"""Dataset ingestion: EMBER-style JSONL records, labels/splits, and a binary vector cache.

Two JSONL record shapes are understood:

* ``raw``: one JSON object per file carrying the per-feature-set groups under
  EMBER's field names (``histogram``, ``byteentropy``, ``strings``,
  ``general``, ``header``, ``section``, ``imports``, ``exports``,
  ``datadirectories``), plus ``label``.  Real EMBER v2 files load unmodified;
  unknown fields are ignored and vectorization happens at load time.
* ``prevectorized``: one JSON object per row with ``label`` and a flat
  2381-entry ``features`` list.

Either shape may carry ``sha256`` (used as the row id) and ``subset``
("train" or "test"; rows default to train).

The cache holds vectors as 32-bit floats: at EMBER scale the matrix is
~2 million rows wide of 2381 columns, and float64 storage would double a
multi-gigabyte file for no modeling benefit (models upcast to float64).

Cache layout, all little-endian:

    magic  b"PEFV"
    u32    format version (1)
    u64    row count
    u32    column count
    i8[n]  labels (-1 unlabeled, 0 benign, 1 malicious)
    u8[n]  split tags (0 train, 1 test)
    f32[n*c] row-major feature matrix
    u32    CRC32 of all preceding bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCache, DimensionError, ParseError
from .features import FEATURE_FIELDS, FEATURE_ORDER, TOTAL_DIM, process_raw_group

__all__ = [
    "LabeledDataset", "load_jsonl", "filter_labeled", "write_cache", "read_cache",
    "SPLIT_TRAIN", "SPLIT_TEST", "CACHE_MAGIC",
]

SPLIT_TRAIN = 0
SPLIT_TEST = 1
_SPLIT_CODES = {"train": SPLIT_TRAIN, "test": SPLIT_TEST}

CACHE_MAGIC = b"PEFV"
CACHE_VERSION = 1

LABEL_UNLABELED = -1
LABEL_BENIGN = 0
LABEL_MALICIOUS = 1


@dataclass
class LabeledDataset:
    """Feature matrix with labels, train/test split tags, and row ids."""

    X: np.ndarray                      # (n, 2381) float32
    y: np.ndarray                      # (n,) int8 in {-1, 0, 1}
    split: np.ndarray                  # (n,) uint8, 0 train / 1 test
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.split = np.asarray(self.split, dtype=np.uint8)
        if not self.ids:
            self.ids = [str(i) for i in range(self.X.shape[0])]
        n = self.X.shape[0]
        if not (len(self.y) == len(self.split) == len(self.ids) == n):
            raise DimensionError(
                f"row mismatch: X={n} y={len(self.y)} split={len(self.split)} ids={len(self.ids)}")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(
            X=self.X[indices],
            y=self.y[indices],
            split=self.split[indices],
            ids=[self.ids[i] for i in indices.tolist()],
        )

    def train_rows(self) -> "LabeledDataset":
        return self.subset(np.nonzero(self.split == SPLIT_TRAIN)[0])

    def test_rows(self) -> "LabeledDataset":
        return self.subset(np.nonzero(self.split == SPLIT_TEST)[0])


def _parse_label(obj: dict, line: int) -> int:
    if "label" not in obj:
        raise ParseError(line, "missing 'label' field")
    label = obj["label"]
    if isinstance(label, float) and label.is_integer():
        label = int(label)
    if not isinstance(label, int) or isinstance(label, bool) or label not in (-1, 0, 1):
        raise ParseError(line, f"label must be -1, 0, or 1, got {obj['label']!r}")
    return label


def _parse_split(obj: dict, line: int, default: int) -> int:
    subset = obj.get("subset")
    if subset is None:
        return default
    code = _SPLIT_CODES.get(subset)
    if code is None:
        raise ParseError(line, f"subset must be 'train' or 'test', got {subset!r}")
    return code


def load_jsonl(path, mode: str = "raw", default_split: str = "train") -> LabeledDataset:
    """Load one JSONL file into a :class:`LabeledDataset`, preserving line order."""
    if mode not in ("raw", "prevectorized"):
        raise ValueError(f"mode must be 'raw' or 'prevectorized', got {mode!r}")
    default = _SPLIT_CODES[default_split]
    rows: list[np.ndarray] = []
    labels: list[int] = []
    splits: list[int] = []
    ids: list[str] = []
    with open(path, "rb") as fh:
        for line_no, raw_line in enumerate(fh, start=1):
            raw_line = raw_line.strip()
            if not raw_line:
                continue
            try:
                obj = json.loads(raw_line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(line_no, "each line must be a JSON object")
            labels.append(_parse_label(obj, line_no))
            splits.append(_parse_split(obj, line_no, default))
            ids.append(str(obj.get("sha256", line_no - 1)))
            if mode == "prevectorized":
                vec = obj.get("features")
                if not isinstance(vec, list):
                    raise ParseError(line_no, "missing 'features' list")
                if len(vec) != TOTAL_DIM:
                    raise DimensionError(
                        f"line {line_no}: expected {TOTAL_DIM} features, got {len(vec)}")
                rows.append(np.asarray(vec, dtype=np.float32))
            else:
                try:
                    blocks = [process_raw_group(abbr, obj.get(FEATURE_FIELDS[abbr]))
                              for abbr in FEATURE_ORDER]
                except (TypeError, ValueError, KeyError, IndexError) as exc:
                    raise ParseError(line_no, f"bad feature group: {exc}") from exc
                rows.append(np.hstack(blocks).astype(np.float32))
    X = np.vstack(rows) if rows else np.zeros((0, TOTAL_DIM), dtype=np.float32)
    return LabeledDataset(X=X, y=np.asarray(labels, dtype=np.int8),
                          split=np.asarray(splits, dtype=np.uint8), ids=ids)


def filter_labeled(ds: LabeledDataset) -> LabeledDataset:
    """Drop unlabeled rows (label -1), preserving order."""
    return ds.subset(np.nonzero(ds.y != LABEL_UNLABELED)[0])


def concat(datasets) -> LabeledDataset:
    """Stack datasets in order; all must share the column count."""
    datasets = list(datasets)
    if not datasets:
        return LabeledDataset(X=np.zeros((0, TOTAL_DIM), dtype=np.float32),
                              y=np.zeros(0, dtype=np.int8), split=np.zeros(0, dtype=np.uint8))
    return LabeledDataset(
        X=np.vstack([d.X for d in datasets]),
        y=np.concatenate([d.y for d in datasets]),
        split=np.concatenate([d.split for d in datasets]),
        ids=[i for d in datasets for i in d.ids],
    )


def write_cache(ds: LabeledDataset, path) -> None:
    """Write the dataset to the binary cache format (row ids are not stored)."""
    n, c = ds.X.shape
    header = CACHE_MAGIC + struct.pack("<IQI", CACHE_VERSION, n, c)
    labels = ds.y.astype("<i1").tobytes()
    splits = ds.split.astype("<u1").tobytes()
    matrix = np.ascontiguousarray(ds.X, dtype="<f4").tobytes()
    crc = zlib.crc32(header)
    crc = zlib.crc32(labels, crc)
    crc = zlib.crc32(splits, crc)
    crc = zlib.crc32(matrix, crc)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(labels)
        fh.write(splits)
        fh.write(matrix)
        fh.write(struct.pack("<I", crc))


def read_cache(path) -> LabeledDataset:
    """Read a binary cache; ids are regenerated as row indices."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header_size = 4 + 4 + 8 + 4
    if len(blob) < header_size + 4:
        raise CorruptCache(f"cache file too short ({len(blob)} bytes)")
    if blob[:4] != CACHE_MAGIC:
        raise CorruptCache(f"bad magic {blob[:4]!r}, expected {CACHE_MAGIC!r}")
    version, n, c = struct.unpack("<IQI", blob[4:header_size])
    if version != CACHE_VERSION:
        raise CorruptCache(f"unsupported cache version {version}")
    expected = header_size + n + n + n * c * 4 + 4
    if len(blob) != expected:
        raise CorruptCache(f"cache is {len(blob)} bytes, expected {expected}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptCache("CRC mismatch, cache is corrupt")
    offset = header_size
    labels = np.frombuffer(blob, dtype="<i1", count=n, offset=offset)
    offset += n
    splits = np.frombuffer(blob, dtype="<u1", count=n, offset=offset)
    offset += n
    matrix = np.frombuffer(blob, dtype="<f4", count=n * c, offset=offset).reshape(n, c)
    return LabeledDataset(X=matrix.copy(), y=labels.copy(), split=splits.copy(),
                          ids=[str(i) for i in range(n)])

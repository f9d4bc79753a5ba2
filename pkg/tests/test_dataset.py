import json

import numpy as np
import pytest

from pemal import dataset
from pemal.dataset import (LabeledDataset, concat, filter_labeled, load_jsonl, read_cache,
                           write_cache)
from pemal.errors import CorruptCache, DimensionError, ParseError
from pemal.features import TOTAL_DIM, raw_record, vectorize

from craft import build_pe


def write_lines(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def random_dataset(n=10, cols=TOTAL_DIM, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(
        X=rng.normal(size=(n, cols)).astype(np.float32),
        y=rng.integers(-1, 2, size=n).astype(np.int8),
        split=rng.integers(0, 2, size=n).astype(np.uint8),
    )


class TestLoadJsonlPrevectorized:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        ds = load_jsonl(path, mode="prevectorized")
        assert len(ds) == 0
        assert ds.X.shape == (0, TOTAL_DIM)

    def test_labels_pass_through(self, tmp_path):
        path = tmp_path / "rows.jsonl"
        write_lines(path, [{"label": lab, "features": [0.0] * TOTAL_DIM}
                           for lab in (-1, 0, 1)])
        ds = load_jsonl(path, mode="prevectorized")
        assert ds.y.tolist() == [-1, 0, 1]

    def test_wrong_width_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_lines(path, [{"label": 0, "features": [0.0] * TOTAL_DIM},
                           {"label": 1, "features": [0.0] * (TOTAL_DIM - 1)}])
        with pytest.raises(DimensionError, match="line 2"):
            load_jsonl(path, mode="prevectorized")

    def test_missing_label(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_lines(path, [{"features": [0.0] * TOTAL_DIM}])
        with pytest.raises(ParseError) as exc:
            load_jsonl(path, mode="prevectorized")
        assert exc.value.line == 1

    def test_bad_label_value(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_lines(path, [{"label": 2, "features": [0.0] * TOTAL_DIM}])
        with pytest.raises(ParseError):
            load_jsonl(path, mode="prevectorized")

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": 0, "features": [' + "\n")
        with pytest.raises(ParseError) as exc:
            load_jsonl(path, mode="prevectorized")
        assert exc.value.line == 1

    def test_subset_tags(self, tmp_path):
        path = tmp_path / "rows.jsonl"
        write_lines(path, [{"label": 0, "subset": "test", "features": [0.0] * TOTAL_DIM},
                           {"label": 1, "features": [0.0] * TOTAL_DIM}])
        ds = load_jsonl(path, mode="prevectorized", default_split="train")
        assert ds.split.tolist() == [dataset.SPLIT_TEST, dataset.SPLIT_TRAIN]

    def test_sha256_used_as_id(self, tmp_path):
        path = tmp_path / "rows.jsonl"
        write_lines(path, [{"label": 0, "sha256": "abc123", "features": [0.0] * TOTAL_DIM}])
        ds = load_jsonl(path, mode="prevectorized")
        assert ds.ids == ["abc123"]


class TestLoadJsonlRaw:
    def test_raw_record_vectorizes_like_extractor(self, tmp_path):
        blob = build_pe(imports={"k.dll": ["f"]}, exports=["e"]).data
        record = {"label": 1, **raw_record(blob)}
        path = tmp_path / "raw.jsonl"
        write_lines(path, [record])
        ds = load_jsonl(path, mode="raw")
        np.testing.assert_array_equal(ds.X[0], vectorize(blob).astype(np.float32))

    def test_missing_groups_become_zeros(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        write_lines(path, [{"label": 0}])
        ds = load_jsonl(path, mode="raw")
        assert ds.X.shape == (1, TOTAL_DIM)
        assert not ds.X.any()

    def test_unknown_fields_ignored(self, tmp_path):
        blob = build_pe().data
        record = {"label": 0, "appeared": "2018-01", "avclass": "x", **raw_record(blob)}
        path = tmp_path / "raw.jsonl"
        write_lines(path, [record])
        assert len(load_jsonl(path, mode="raw")) == 1

    def test_bad_group_payload_names_line(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        write_lines(path, [{"label": 0, "histogram": "not-a-list"}])
        with pytest.raises(ParseError) as exc:
            load_jsonl(path, mode="raw")
        assert exc.value.line == 1

    def test_mode_validation(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text("")
        with pytest.raises(ValueError):
            load_jsonl(path, mode="nope")


class TestFilterLabeled:
    def test_drops_unlabeled(self):
        ds = LabeledDataset(X=np.zeros((4, 3), dtype=np.float32),
                            y=np.array([-1, 0, 1, -1], dtype=np.int8),
                            split=np.zeros(4, dtype=np.uint8),
                            ids=["a", "b", "c", "d"])
        out = filter_labeled(ds)
        assert out.y.tolist() == [0, 1]
        assert out.ids == ["b", "c"]

    def test_identity_when_fully_labeled(self):
        ds = LabeledDataset(X=np.ones((3, 2), dtype=np.float32),
                            y=np.array([0, 1, 0], dtype=np.int8),
                            split=np.zeros(3, dtype=np.uint8))
        out = filter_labeled(ds)
        assert len(out) == 3
        np.testing.assert_array_equal(out.X, ds.X)

    def test_preserves_feature_values(self):
        ds = random_dataset(n=20)
        out = filter_labeled(ds)
        kept = np.nonzero(ds.y != -1)[0]
        np.testing.assert_array_equal(out.X, ds.X[kept])

    def test_equal_thirds_keep_two_thirds(self):
        # mirrors the EMBER train-split proportions at desk scale:
        # equal parts unlabeled/benign/malicious leave 2n/3 labeled rows
        n = 300
        ds = LabeledDataset(X=np.zeros((n, 2), dtype=np.float32),
                            y=np.tile([-1, 0, 1], n // 3).astype(np.int8),
                            split=np.zeros(n, dtype=np.uint8))
        assert len(filter_labeled(ds)) == 200


class TestCacheRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        ds = random_dataset(n=10)
        path = tmp_path / "cache.bin"
        write_cache(ds, path)
        loaded = read_cache(path)
        np.testing.assert_array_equal(loaded.X, ds.X)
        assert loaded.X.dtype == np.float32
        np.testing.assert_array_equal(loaded.y, ds.y)
        np.testing.assert_array_equal(loaded.split, ds.split)

    def test_write_is_deterministic(self, tmp_path):
        ds = random_dataset(n=6)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        write_cache(ds, a)
        write_cache(ds, b)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_cache(self, tmp_path):
        ds = random_dataset(n=5)
        path = tmp_path / "cache.bin"
        write_cache(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 7])
        with pytest.raises(CorruptCache):
            read_cache(path)

    def test_magic_mismatch(self, tmp_path):
        ds = random_dataset(n=5)
        path = tmp_path / "cache.bin"
        write_cache(ds, path)
        blob = bytearray(path.read_bytes())
        blob[0:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCache, match="magic"):
            read_cache(path)

    def test_flipped_payload_byte_fails_crc(self, tmp_path):
        ds = random_dataset(n=5)
        path = tmp_path / "cache.bin"
        write_cache(ds, path)
        blob = bytearray(path.read_bytes())
        blob[40] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCache, match="CRC"):
            read_cache(path)

    def test_empty_dataset_round_trip(self, tmp_path):
        ds = LabeledDataset(X=np.zeros((0, TOTAL_DIM), dtype=np.float32),
                            y=np.zeros(0, dtype=np.int8), split=np.zeros(0, dtype=np.uint8))
        path = tmp_path / "cache.bin"
        write_cache(ds, path)
        assert len(read_cache(path)) == 0


class TestConcat:
    def test_orders_rows(self):
        a = random_dataset(n=3, seed=1)
        b = random_dataset(n=2, seed=2)
        out = concat([a, b])
        assert len(out) == 5
        np.testing.assert_array_equal(out.X[:3], a.X)
        np.testing.assert_array_equal(out.X[3:], b.X)

    def test_empty_input(self):
        assert len(concat([])) == 0

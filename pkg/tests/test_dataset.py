"""Splitting, BARS1 round trips, md5 stability, batch iteration."""

import numpy as np
import pytest

from ctrbench.dataset import (
    EncodedDataset,
    encode_and_store,
    encode_rows,
    iterate_batches,
    partition_digest,
    read_bars,
    split_dataset,
    split_sizes,
)
from ctrbench.errors import ConfigError, DataError
from ctrbench.preprocess import FieldSpec, build_feature_map


class TestSplit:
    def test_ratio_arithmetic(self):
        assert split_sizes(100) == (80, 10, 10)
        assert split_sizes(101) == (81, 10, 10)
        assert split_sizes(10) == (8, 1, 1)

    def test_partitions_disjoint_and_exhaustive(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(10, 1000))
            seed = int(rng.integers(0, 2**31))
            tr, va, te = split_dataset(n, seed)
            merged = np.concatenate([tr, va, te])
            assert len(merged) == n
            assert len(np.unique(merged)) == n

    def test_same_seed_same_digests(self):
        a = split_dataset(1000, 2018)
        b = split_dataset(1000, 2018)
        for x, y in zip(a, b):
            assert partition_digest(x) == partition_digest(y)

    def test_different_seed_different_partition(self):
        a = split_dataset(1000, 2018)
        b = split_dataset(1000, 2019)
        assert partition_digest(a[0]) != partition_digest(b[0])

    def test_too_small_raises(self):
        with pytest.raises(DataError):
            split_dataset(9, 1)


def _toy_map_and_rows():
    rows = [
        {"color": "red", "tags": ["x", "y"]},
        {"color": "blue", "tags": ["x"]},
        {"color": "red", "tags": []},
        {"color": "green", "tags": ["z", "x", "y"]},
    ]
    specs = [FieldSpec("color", min_count=1),
             FieldSpec("tags", kind="sequence", max_len=4, pooling="sum",
                       min_count=1)]
    return build_feature_map(rows, specs), rows


class TestEncoding:
    def test_oov_and_padding_rules(self):
        fmap, rows = _toy_map_and_rows()
        cols = encode_rows([{"color": "nope", "tags": ["x", "y"]}], fmap)
        assert cols["color"][0] == 1                      # OOV
        block = cols["tags"][0]
        assert block[2] == 0 and block[3] == 0            # padded with 0
        assert block[0] >= 2 and block[1] >= 2
        assert len(block) == 4

    def test_indices_within_vocab(self):
        fmap, rows = _toy_map_and_rows()
        cols = encode_rows(rows, fmap)
        assert cols["color"].max() < fmap.vocab_size("color")
        assert cols["tags"].max() < fmap.vocab_size("tags")

    def test_sequence_truncated_to_max_len(self):
        fmap, _ = _toy_map_and_rows()
        cols = encode_rows([{"color": "red", "tags": ["x"] * 10}], fmap)
        assert cols["tags"].shape == (1, 4)

    def test_missing_field_is_row_level_error(self):
        fmap, _ = _toy_map_and_rows()
        with pytest.raises(DataError, match="field=tags"):
            encode_rows([{"color": "red"}], fmap)


class TestBarsFormat:
    def test_round_trip_and_md5(self, tmp_path):
        fmap, rows = _toy_map_and_rows()
        labels = [1, 0, 0, 1]
        ds = encode_and_store(rows, labels, fmap, tmp_path / "train.bars")
        back = read_bars(tmp_path / "train.bars", fmap)
        assert back.md5 == ds.md5
        np.testing.assert_array_equal(back.labels, ds.labels)
        for name in ds.columns:
            np.testing.assert_array_equal(back.columns[name], ds.columns[name])

    def test_reencoding_is_bit_identical(self, tmp_path):
        fmap, rows = _toy_map_and_rows()
        a = encode_and_store(rows, [1, 0, 0, 1], fmap, tmp_path / "a.bars")
        b = encode_and_store(rows, [1, 0, 0, 1], fmap, tmp_path / "b.bars")
        assert a.md5 == b.md5
        assert (tmp_path / "a.bars").read_bytes() == (tmp_path / "b.bars").read_bytes()

    def test_magic_and_layout(self, tmp_path):
        fmap, rows = _toy_map_and_rows()
        ds = encode_and_store(rows, [1, 0, 0, 1], fmap, tmp_path / "t.bars")
        blob = (tmp_path / "t.bars").read_bytes()
        assert blob[:6] == b"BARS1\x00"
        # u16 version, u16 field count, little endian
        assert blob[6:8] == b"\x01\x00"
        assert blob[8:10] == b"\x02\x00"
        # trailing bytes are the labels
        assert list(blob[-4:]) == [1, 0, 0, 1]

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bars"
        path.write_bytes(b"NOTBARS-----")
        with pytest.raises(DataError):
            read_bars(path)

    def test_mismatched_map_rejected(self, tmp_path):
        fmap, rows = _toy_map_and_rows()
        encode_and_store(rows, [1, 0, 0, 1], fmap, tmp_path / "t.bars")
        other = build_feature_map([{"zzz": "a"}], [FieldSpec("zzz", min_count=1)])
        with pytest.raises(DataError):
            read_bars(tmp_path / "t.bars", other)


def _linear_dataset(n=25) -> EncodedDataset:
    return EncodedDataset(
        feature_map_digest="",
        columns={"f": np.arange(n, dtype=np.uint32)},
        labels=np.arange(n, dtype=np.uint8) % 2,
    )


class TestBatches:
    def test_sizes_with_partial_final_batch(self):
        sizes = [b.size for b in iterate_batches(_linear_dataset(25), 10)]
        assert sizes == [10, 10, 5]

    def test_unshuffled_order_reproduces_dataset(self):
        ds = _linear_dataset(25)
        got = np.concatenate([b.columns["f"] for b in iterate_batches(ds, 7)])
        np.testing.assert_array_equal(got, ds.columns["f"])

    def test_shuffle_deterministic_per_epoch(self):
        ds = _linear_dataset(30)
        a = [b.columns["f"] for b in iterate_batches(ds, 8, shuffle_seed=5, epoch=1)]
        b = [b.columns["f"] for b in iterate_batches(ds, 8, shuffle_seed=5, epoch=1)]
        c = [b.columns["f"] for b in iterate_batches(ds, 8, shuffle_seed=5, epoch=2)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert any((x != y).any() for x, y in zip(a, c))

    def test_shuffle_is_a_permutation(self):
        ds = _linear_dataset(30)
        got = np.concatenate(
            [b.columns["f"] for b in iterate_batches(ds, 8, shuffle_seed=3)])
        np.testing.assert_array_equal(np.sort(got), ds.columns["f"])

    def test_prefetch_preserves_order(self):
        ds = _linear_dataset(50)
        plain = [b.columns["f"] for b in iterate_batches(ds, 6, shuffle_seed=1)]
        fetched = [b.columns["f"]
                   for b in iterate_batches(ds, 6, shuffle_seed=1, prefetch=True)]
        assert len(plain) == len(fetched)
        for x, y in zip(plain, fetched):
            np.testing.assert_array_equal(x, y)

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            list(iterate_batches(_linear_dataset(), 0))

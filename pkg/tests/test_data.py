import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ntgcf.data import (DataError, RawInteractions, allocate_counts, load_bundle, load_interactions,
                        save_bundle, split_dataset)


def write(tmp_path, text, name="raw.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadInteractions:
    def test_exact_duplicates_collapse(self, tmp_path):
        raw = load_interactions(write(tmp_path, "u1\ti9\nu1\ti9\nu2\ti9\n"))
        assert raw.records == [("u1", "i9"), ("u2", "i9")]

    def test_empty_file(self, tmp_path):
        assert len(load_interactions(write(tmp_path, ""))) == 0

    def test_extra_columns_and_spaces(self, tmp_path):
        raw = load_interactions(write(tmp_path, "a x 5 123\n\n b  y\t3\n"))
        assert raw.records == [("a", "x"), ("b", "y")]

    def test_malformed_line_names_line_number(self, tmp_path):
        with pytest.raises(DataError, match="line 3"):
            load_interactions(write(tmp_path, "a x\nb y\nlonely\n"))

    def test_header_skip(self, tmp_path):
        raw = load_interactions(write(tmp_path, "user item\na x\n"), skip_header=True)
        assert raw.records == [("a", "x")]

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_interactions(tmp_path / "absent.txt")


class TestAllocateCounts:
    def test_ten_interactions(self):
        assert allocate_counts(10, (0.7, 0.1, 0.2)) == (7, 1, 2)

    @pytest.mark.parametrize("n,expected", [(1, (1, 0, 0)), (2, (2, 0, 0)), (3, (2, 0, 1)),
                                            (4, (3, 0, 1)), (5, (4, 0, 1)), (7, (5, 1, 1))])
    def test_small_users(self, n, expected):
        assert allocate_counts(n, (0.7, 0.1, 0.2)) == expected

    def test_training_kept_for_skewed_ratios(self):
        counts = allocate_counts(3, (0.1, 0.1, 0.8))
        assert counts[0] >= 1 and sum(counts) == 3

    @given(st.integers(0, 500), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
    def test_sum_and_training_floor(self, n, a, b):
        c = 1.0 - a - b
        if c <= 0.01:
            return
        counts = allocate_counts(n, (a, b, c))
        assert sum(counts) == n and min(counts) >= 0
        if n >= 3:
            assert counts[0] >= 1


def make_raw(n_users=30, n_items=40, seed=0):
    rng = np.random.default_rng(seed)
    recs = []
    for u in range(n_users):
        for i in rng.choice(n_items, size=rng.integers(1, 15), replace=False):
            recs.append((f"user{u}", f"item{i}"))
    return RawInteractions(recs)


class TestSplit:
    def test_single_user_sizes(self):
        raw = RawInteractions([("u", f"i{k}") for k in range(10)])
        b = split_dataset(raw, (0.7, 0.1, 0.2), seed=123)
        assert (len(b.train), len(b.valid), len(b.test)) == (7, 1, 2)

    def test_deterministic(self):
        raw = make_raw()
        assert split_dataset(raw, (0.7, 0.1, 0.2), 5) == split_dataset(raw, (0.7, 0.1, 0.2), 5)

    def test_seed_changes_assignment(self):
        raw = make_raw()
        a = split_dataset(raw, (0.7, 0.1, 0.2), 5)
        b = split_dataset(raw, (0.7, 0.1, 0.2), 6)
        assert not np.array_equal(a.test, b.test)

    def test_partition_and_density(self):
        raw = make_raw()
        b = split_dataset(raw, (0.7, 0.1, 0.2), 1)
        keys = [set(map(tuple, b.split(s).tolist())) for s in ("train", "valid", "test")]
        assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
        assert sum(map(len, keys)) == len(raw)
        union = np.vstack([b.train, b.valid, b.test])
        assert set(union[:, 0]) == set(range(b.num_users))
        assert set(union[:, 1]) == set(range(b.num_items))

    def test_per_user_counts_match_allocation(self):
        raw = make_raw(seed=4)
        b = split_dataset(raw, (0.7, 0.1, 0.2), 9)
        per_user = {}
        for uk, _ in raw.records:
            per_user[uk] = per_user.get(uk, 0) + 1
        for ukey, n in per_user.items():
            u = b.user_map[ukey]
            got = tuple(int((b.split(s)[:, 0] == u).sum()) for s in ("train", "valid", "test"))
            assert got == allocate_counts(n, (0.7, 0.1, 0.2))

    def test_cold_items_counted(self):
        raw = RawInteractions([("a", "x"), ("b", "y")])  # single-interaction users train-only
        b = split_dataset(raw, (0.7, 0.1, 0.2), 0)
        assert b.cold_users == 0 and b.cold_items == 0
        raw = RawInteractions([("a", f"i{k}") for k in range(10)])
        b = split_dataset(raw, (0.7, 0.1, 0.2), 0)
        assert b.cold_items == 3

    @pytest.mark.parametrize("ratios", [(0.7, 0.1, 0.1), (0.8, 0.3, -0.1), (1.0, 0.0, 0.0)])
    def test_bad_ratios(self, ratios):
        with pytest.raises(ValueError):
            split_dataset(make_raw(), ratios, 0)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 9)), max_size=60), st.integers(0, 2**31))
    def test_partition_property(self, pairs, seed):
        raw = RawInteractions(list(dict.fromkeys((f"u{u}", f"i{i}") for u, i in pairs)))
        b = split_dataset(raw, (0.7, 0.1, 0.2), seed)
        assert len(b.train) + len(b.valid) + len(b.test) == len(raw)
        all_keys = {(b.user_keys[u], b.item_keys[i])
                    for s in ("train", "valid", "test") for u, i in b.split(s).tolist()}
        assert all_keys == set(raw.records)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        b = split_dataset(make_raw(), (0.7, 0.1, 0.2), 3)
        save_bundle(b, tmp_path / "bundle")
        assert load_bundle(tmp_path / "bundle") == b

    def test_byte_identical_saves(self, tmp_path):
        raw = make_raw()
        save_bundle(split_dataset(raw, (0.7, 0.1, 0.2), 3), tmp_path / "a")
        save_bundle(split_dataset(raw, (0.7, 0.1, 0.2), 3), tmp_path / "b")
        for name in ("manifest.json", "train.txt", "valid.txt", "test.txt", "users.txt", "items.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_records_strategy(self, tmp_path):
        save_bundle(split_dataset(make_raw(), (0.7, 0.1, 0.2), 3), tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["split_strategy"] == "per-user"
        assert manifest["ratios"] == [0.7, 0.1, 0.2]

    def test_empty_dir(self, tmp_path):
        with pytest.raises(DataError, match="missing manifest"):
            load_bundle(tmp_path)

    def test_wrong_num_users(self, tmp_path):
        b = split_dataset(make_raw(), (0.7, 0.1, 0.2), 3)
        save_bundle(b, tmp_path)
        for delta in (-5, 5):
            m = json.loads((tmp_path / "manifest.json").read_text())
            m["num_users"] = b.num_users + delta
            (tmp_path / "manifest.json").write_text(json.dumps(m))
            with pytest.raises(DataError, match="index out of range"):
                load_bundle(tmp_path)

    def test_checksum_mismatch(self, tmp_path):
        save_bundle(split_dataset(make_raw(), (0.7, 0.1, 0.2), 3), tmp_path)
        with open(tmp_path / "test.txt", "a") as fh:
            fh.write("0\t0\n")
        with pytest.raises(DataError, match="checksum"):
            load_bundle(tmp_path)

    def test_missing_split_file(self, tmp_path):
        save_bundle(split_dataset(make_raw(), (0.7, 0.1, 0.2), 3), tmp_path)
        (tmp_path / "valid.txt").unlink()
        with pytest.raises(DataError, match="missing file"):
            load_bundle(tmp_path)


def test_double_colon_separator(tmp_path):
    raw = load_interactions(write(tmp_path, "1::1193::5::978300760\n1::661::3::978302109\n"))
    assert raw.records == [("1", "1193"), ("1", "661")]

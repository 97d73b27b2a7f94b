import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedfair.data import (
    ColumnSpec,
    DataFormatError,
    DataSchema,
    RawDataset,
    SchemaError,
    batch_iter,
    encode_features,
    fit_feature_stats,
    load_csv_dataset,
    partition_clients,
)

from conftest import write_csv

HEADER = ["color", "shape", "size", "grp", "label"]


def test_schema_requires_single_label_and_sensitive():
    with pytest.raises(SchemaError):
        DataSchema(
            columns=(ColumnSpec("a", "continuous"), ColumnSpec("g", "sensitive")),
            positive_label="yes",
            sensitive_values=("g0",),
        )
    with pytest.raises(SchemaError):
        DataSchema(
            columns=(
                ColumnSpec("y1", "label"),
                ColumnSpec("y2", "label"),
                ColumnSpec("g", "sensitive"),
            ),
            positive_label="yes",
            sensitive_values=("g0",),
        )


def test_categorical_must_list_values():
    with pytest.raises(SchemaError):
        ColumnSpec("c", "categorical")


def test_load_small_fixture(tmp_path, two_group_schema):
    path = write_csv(
        tmp_path / "d.csv",
        HEADER,
        [
            ["A", "x", "1.0", "g0", "yes"],
            ["B", "y", "2.0", "g1", "no"],
            ["A", "z", "3.0", "g0", "yes"],
        ],
    )
    raw = load_csv_dataset(path, two_group_schema)
    assert len(raw) == 3
    assert raw.rows[0] == ["A", "x", "1.0", "g0", "yes"]
    assert raw.n_dropped_missing == 0


def test_load_header_only(tmp_path, two_group_schema):
    path = write_csv(tmp_path / "d.csv", HEADER, [])
    raw = load_csv_dataset(path, two_group_schema)
    assert len(raw) == 0


def test_load_missing_file(two_group_schema):
    with pytest.raises(FileNotFoundError):
        load_csv_dataset("/nonexistent/never.csv", two_group_schema)


def test_load_arity_mismatch(tmp_path, two_group_schema):
    path = write_csv(tmp_path / "d.csv", HEADER, [["A", "x", "1.0", "g0"]])
    with pytest.raises(DataFormatError, match=":2"):
        load_csv_dataset(path, two_group_schema)


def test_load_header_mismatch(tmp_path, two_group_schema):
    path = write_csv(tmp_path / "d.csv", ["a", "b"], [])
    with pytest.raises(DataFormatError, match="header"):
        load_csv_dataset(path, two_group_schema)


def test_load_unknown_categorical_reports_row(tmp_path, two_group_schema):
    path = write_csv(
        tmp_path / "d.csv",
        HEADER,
        [["A", "x", "1.0", "g0", "yes"], ["Q", "x", "1.0", "g0", "yes"]],
    )
    with pytest.raises(DataFormatError, match=":3"):
        load_csv_dataset(path, two_group_schema)


def test_missing_rows_dropped_and_counted(tmp_path, two_group_schema):
    path = write_csv(
        tmp_path / "d.csv",
        HEADER,
        [
            ["A", "x", "1.0", "g0", "yes"],
            ["?", "x", "1.0", "g0", "yes"],
            ["B", "?", "2.0", "g1", "no"],
        ],
    )
    raw = load_csv_dataset(path, two_group_schema)
    assert len(raw) == 1
    assert raw.n_dropped_missing == 2


def test_one_hot_and_minmax(two_group_schema):
    raw = RawDataset(
        header=HEADER,
        rows=[
            ["A", "x", "0", "g0", "yes"],
            ["B", "y", "5", "g1", "no"],
            ["A", "z", "10", "g0", "yes"],
        ],
    )
    enc = encode_features(raw, two_group_schema)
    # color one-hot [1,0]/[0,1], shape one-hot 3-wide, size scaled
    assert enc.features.shape == (3, 6)
    np.testing.assert_array_equal(enc.features[0, :2], [1.0, 0.0])
    np.testing.assert_array_equal(enc.features[1, :2], [0.0, 1.0])
    np.testing.assert_array_equal(enc.features[:, 5], [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(enc.labels, [1, 0, 1])
    np.testing.assert_array_equal(enc.groups, [0, 1, 0])


def test_encode_exact_fixture_roundtrip(two_group_schema):
    # fixture built so its encoding is known exactly
    raw = RawDataset(
        header=HEADER,
        rows=[
            ["A", "x", "0", "g0", "yes"],
            ["B", "z", "4", "g1", "no"],
        ],
    )
    enc = encode_features(raw, two_group_schema)
    expected = np.array(
        [
            [1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 1.0, 1.0],
        ]
    )
    np.testing.assert_array_equal(enc.features, expected)


def test_unknown_sensitive_dropped_by_default(two_group_schema):
    raw = RawDataset(
        header=HEADER,
        rows=[
            ["A", "x", "1", "g0", "yes"],
            ["A", "x", "2", "other", "yes"],
            ["B", "y", "3", "g1", "no"],
        ],
    )
    enc = encode_features(raw, two_group_schema)
    assert enc.features.shape[0] == 2
    assert enc.n_dropped_sensitive == 1
    np.testing.assert_array_equal(enc.groups, [0, 1])


def test_unknown_sensitive_extra_group(two_group_schema):
    schema = DataSchema(
        columns=two_group_schema.columns,
        positive_label="yes",
        sensitive_values=("g0", "g1"),
        unknown_sensitive="extra_group",
    )
    raw = RawDataset(
        header=HEADER,
        rows=[["A", "x", "1", "other", "yes"], ["A", "x", "2", "g1", "no"]],
    )
    enc = encode_features(raw, schema)
    np.testing.assert_array_equal(enc.groups, [2, 1])
    assert enc.n_dropped_sensitive == 0


def test_constant_continuous_column_reported(two_group_schema):
    raw = RawDataset(
        header=HEADER,
        rows=[["A", "x", "7", "g0", "yes"], ["B", "y", "7", "g1", "no"]],
    )
    enc = encode_features(raw, two_group_schema)
    assert enc.stats.constant_columns() == ["size"]
    np.testing.assert_array_equal(enc.features[:, 5], [0.0, 0.0])


def test_encode_with_training_stats(two_group_schema):
    train = RawDataset(
        header=HEADER,
        rows=[["A", "x", "0", "g0", "yes"], ["A", "x", "10", "g1", "no"]],
    )
    test = RawDataset(header=HEADER, rows=[["A", "x", "5", "g0", "yes"]])
    stats = fit_feature_stats(train, two_group_schema)
    enc = encode_features(test, two_group_schema, stats=stats)
    assert enc.features[0, 5] == 0.5


def test_scaling_bounds_on_training_data(two_group_schema):
    rng = np.random.default_rng(5)
    rows = [
        ["A", "x", f"{v:.4f}", "g0" if i % 2 else "g1", "yes" if i % 3 else "no"]
        for i, v in enumerate(rng.normal(scale=50, size=100))
    ]
    enc = encode_features(RawDataset(header=HEADER, rows=rows), two_group_schema)
    assert enc.features.min() >= 0.0
    assert enc.features.max() <= 1.0


def _partition_inputs(rng, n):
    return rng.normal(size=(n, 3)), rng.integers(0, 2, size=n), rng.integers(0, 2, size=n)


def test_partition_even_split():
    rng = np.random.default_rng(0)
    x, y, a = _partition_inputs(rng, 10)
    shards = partition_clients(x, y, a, 5, seed=1)
    assert [len(s) for s in shards] == [2, 2, 2, 2, 2]


def test_partition_determinism():
    rng = np.random.default_rng(0)
    x, y, a = _partition_inputs(rng, 23)
    first = partition_clients(x, y, a, 4, seed=9)
    second = partition_clients(x, y, a, 4, seed=9)
    for s1, s2 in zip(first, second):
        np.testing.assert_array_equal(s1.features, s2.features)
        np.testing.assert_array_equal(s1.labels, s2.labels)


def test_partition_uneven_disjoint_cover():
    rng = np.random.default_rng(0)
    x, y, a = _partition_inputs(rng, 11)
    shards = partition_clients(x, y, a, 5, seed=3)
    sizes = sorted(len(s) for s in shards)
    assert sizes == [2, 2, 2, 2, 3]
    # disjoint cover: every original row appears in exactly one shard
    seen = np.concatenate([s.features[:, 0] for s in shards])
    assert sorted(seen.tolist()) == sorted(x[:, 0].tolist())


def test_partition_too_many_clients():
    rng = np.random.default_rng(0)
    x, y, a = _partition_inputs(rng, 3)
    with pytest.raises(ValueError):
        partition_clients(x, y, a, 4, seed=0)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=60),
    k=st.integers(min_value=1, max_value=8),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_partition_property_disjoint_cover(n, k, seed):
    if n < k:
        return
    rng = np.random.default_rng(0)
    x = np.arange(n, dtype=np.float64)[:, None]
    y = rng.integers(0, 2, size=n)
    a = rng.integers(0, 2, size=n)
    shards = partition_clients(x, y, a, k, seed=seed)
    ids = np.concatenate([s.features[:, 0].astype(int) for s in shards])
    assert len(ids) == n
    assert len(set(ids.tolist())) == n
    assert max(len(s) for s in shards) - min(len(s) for s in shards) <= 1


def _tiny_dataset(n):
    rng = np.random.default_rng(1)
    from fedfair.data import ClientDataset

    return ClientDataset(
        features=rng.normal(size=(n, 2)),
        labels=rng.integers(0, 2, size=n),
        groups=rng.integers(0, 2, size=n),
        client_id=0,
    )


def test_batch_iter_full_batch():
    batches = batch_iter(_tiny_dataset(4), 4, seed=0)
    first = next(batches)
    assert sorted(first.tolist()) == [0, 1, 2, 3]


def test_batch_iter_cover_and_sizes():
    batches = batch_iter(_tiny_dataset(5), 2, seed=0)
    epoch = [next(batches) for _ in range(3)]
    assert [len(b) for b in epoch] == [2, 2, 1]
    assert sorted(np.concatenate(epoch).tolist()) == [0, 1, 2, 3, 4]


def test_batch_iter_determinism():
    a = [b.tolist() for _, b in zip(range(6), batch_iter(_tiny_dataset(7), 3, seed=5))]
    b = [b.tolist() for _, b in zip(range(6), batch_iter(_tiny_dataset(7), 3, seed=5))]
    assert a == b


def test_batch_iter_rejects_bad_sizes():
    with pytest.raises(ValueError):
        next(batch_iter(_tiny_dataset(4), 0, seed=0))
    with pytest.raises(ValueError):
        next(batch_iter(_tiny_dataset(4), 5, seed=0))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=40),
    b=st.integers(min_value=1, max_value=40),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_batch_iter_epoch_property(n, b, seed):
    if b > n:
        return
    batches = batch_iter(_tiny_dataset(n), b, seed=seed)
    per_epoch = -(-n // b)
    epoch = [next(batches) for _ in range(per_epoch)]
    assert sorted(np.concatenate(epoch).tolist()) == list(range(n))

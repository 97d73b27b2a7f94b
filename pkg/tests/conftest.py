import pytest

from fedfair.data import ClientDataset, ColumnSpec, DataSchema


@pytest.fixture
def two_group_schema():
    return DataSchema(
        columns=(
            ColumnSpec("color", "categorical", ("A", "B")),
            ColumnSpec("shape", "categorical", ("x", "y", "z")),
            ColumnSpec("size", "continuous"),
            ColumnSpec("grp", "sensitive"),
            ColumnSpec("label", "label"),
        ),
        positive_label="yes",
        sensitive_values=("g0", "g1"),
    )


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")
    return path


def random_client_dataset(rng, n=40, d=4, n_groups=2, client_id=0):
    return ClientDataset(
        features=rng.normal(size=(n, d)),
        labels=rng.integers(0, 2, size=n),
        groups=rng.integers(0, n_groups, size=n),
        client_id=client_id,
    )

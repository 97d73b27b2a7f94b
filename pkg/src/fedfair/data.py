"""Tabular data loading, encoding, and per-client partitioning.

A :class:`DataSchema` declares each column as categorical, continuous, the
label, or the sensitive attribute. Loading validates the file against the
schema, encoding produces a float feature matrix (one-hot categoricals,
min-max scaled continuous), and partitioning splits rows into near-equal
IID shards, one per client.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .rngstream import stream

KIND_CATEGORICAL = "categorical"
KIND_CONTINUOUS = "continuous"
KIND_LABEL = "label"
KIND_SENSITIVE = "sensitive"
_KINDS = (KIND_CATEGORICAL, KIND_CONTINUOUS, KIND_LABEL, KIND_SENSITIVE)

UNKNOWN_SENSITIVE_DROP = "drop"
UNKNOWN_SENSITIVE_EXTRA = "extra_group"


class SchemaError(ValueError):
    """Schema does not describe a usable dataset."""


class DataFormatError(ValueError):
    """File contents violate the schema."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    values: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == KIND_CATEGORICAL and not self.values:
            raise SchemaError(
                f"column {self.name!r}: categorical column must list its admissible values"
            )


@dataclass(frozen=True)
class DataSchema:
    """Column layout plus label/sensitive-attribute conventions.

    ``sensitive_values`` fixes the group-id order: group ``g`` is the row
    whose sensitive cell equals ``sensitive_values[g]``. Rows with other
    sensitive values are dropped or mapped to one extra group, per
    ``unknown_sensitive``.
    """

    columns: tuple[ColumnSpec, ...]
    positive_label: str
    sensitive_values: tuple[str, ...]
    drop_missing: bool = True
    missing_token: str = "?"
    unknown_sensitive: str = UNKNOWN_SENSITIVE_DROP

    def __post_init__(self):
        labels = [c for c in self.columns if c.kind == KIND_LABEL]
        sensitive = [c for c in self.columns if c.kind == KIND_SENSITIVE]
        if len(labels) != 1:
            raise SchemaError(f"schema must have exactly one label column, got {len(labels)}")
        if len(sensitive) != 1:
            raise SchemaError(
                f"schema must have exactly one sensitive column, got {len(sensitive)}"
            )
        if len(self.sensitive_values) < 1:
            raise SchemaError("sensitive_values must list at least one group value")
        if len(set(self.sensitive_values)) != len(self.sensitive_values):
            raise SchemaError("sensitive_values must be distinct")
        if self.unknown_sensitive not in (UNKNOWN_SENSITIVE_DROP, UNKNOWN_SENSITIVE_EXTRA):
            raise SchemaError("unknown_sensitive must be drop or extra_group")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")

    @property
    def label_column(self) -> ColumnSpec:
        return next(c for c in self.columns if c.kind == KIND_LABEL)

    @property
    def sensitive_column(self) -> ColumnSpec:
        return next(c for c in self.columns if c.kind == KIND_SENSITIVE)

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.kind in (KIND_CATEGORICAL, KIND_CONTINUOUS))

    @property
    def n_groups(self) -> int:
        extra = 1 if self.unknown_sensitive == UNKNOWN_SENSITIVE_EXTRA else 0
        return len(self.sensitive_values) + extra

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": c.name, "kind": c.kind, **({"values": list(c.values)} if c.values else {})}
                for c in self.columns
            ],
            "positive_label": self.positive_label,
            "sensitive_values": list(self.sensitive_values),
            "drop_missing": self.drop_missing,
            "missing_token": self.missing_token,
            "unknown_sensitive": self.unknown_sensitive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataSchema":
        known = {
            "columns",
            "positive_label",
            "sensitive_values",
            "drop_missing",
            "missing_token",
            "unknown_sensitive",
        }
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        for req in ("columns", "positive_label", "sensitive_values"):
            if req not in d:
                raise SchemaError(f"schema missing required key {req!r}")
        cols = []
        for spec in d["columns"]:
            extra = set(spec) - {"name", "kind", "values"}
            if extra:
                raise SchemaError(f"unknown column keys: {sorted(extra)}")
            cols.append(
                ColumnSpec(spec["name"], spec["kind"], tuple(spec.get("values", ())))
            )
        return cls(
            columns=tuple(cols),
            positive_label=d["positive_label"],
            sensitive_values=tuple(d["sensitive_values"]),
            drop_missing=d.get("drop_missing", True),
            missing_token=d.get("missing_token", "?"),
            unknown_sensitive=d.get("unknown_sensitive", UNKNOWN_SENSITIVE_DROP),
        )


@dataclass
class RawDataset:
    """Validated string rows, in file order, minus reported missing-row drops."""

    header: list[str]
    rows: list[list[str]]
    n_dropped_missing: int = 0

    def __len__(self) -> int:
        return len(self.rows)


def load_csv_dataset(path, schema: DataSchema) -> RawDataset:
    """Load and validate a CSV file against ``schema``.

    Rows containing the missing token are dropped (and counted) when
    ``schema.drop_missing`` is set; any other cell value outside a
    categorical column's admissible list is an error naming the row.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise FileNotFoundError(f"dataset file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row")
        expected = [c.name for c in schema.columns]
        if header != expected:
            raise DataFormatError(
                f"{path}: header {header} does not match schema columns {expected}"
            )
        col_index = {c.name: i for i, c in enumerate(schema.columns)}
        categorical = [
            (col_index[c.name], c) for c in schema.columns if c.kind == KIND_CATEGORICAL
        ]

        rows: list[list[str]] = []
        n_dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            row = [cell.strip() for cell in row]
            if len(row) != len(expected):
                raise DataFormatError(
                    f"{path}:{lineno}: row has {len(row)} cells, expected {len(expected)}"
                )
            if schema.drop_missing and schema.missing_token in row:
                n_dropped += 1
                continue
            for idx, col in categorical:
                if row[idx] not in col.values:
                    raise DataFormatError(
                        f"{path}:{lineno}: unknown value {row[idx]!r} "
                        f"for categorical column {col.name!r}"
                    )
            # Sensitive values outside the schema list are resolved at encode
            # time (drop or extra group), never an error here.
            rows.append(row)
    return RawDataset(header=header, rows=rows, n_dropped_missing=n_dropped)


@dataclass(frozen=True)
class FeatureStats:
    """Training-set min/max per continuous column, for reuse on held-out data."""

    minima: dict[str, float]
    maxima: dict[str, float]

    def constant_columns(self) -> list[str]:
        return [n for n in self.minima if self.maxima[n] == self.minima[n]]


@dataclass
class EncodedData:
    """Encoded feature matrix plus aligned labels and group ids."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    stats: FeatureStats
    feature_names: list[str]
    n_dropped_sensitive: int = 0

    def __iter__(self):
        return iter((self.features, self.labels, self.groups))


def fit_feature_stats(raw: RawDataset, schema: DataSchema) -> FeatureStats:
    """Compute min/max of every continuous column over ``raw``."""
    minima, maxima = {}, {}
    for j, col in enumerate(schema.columns):
        if col.kind != KIND_CONTINUOUS:
            continue
        vals = _parse_continuous_column(raw, j, col.name)
        minima[col.name] = float(vals.min()) if vals.size else 0.0
        maxima[col.name] = float(vals.max()) if vals.size else 0.0
    return FeatureStats(minima=minima, maxima=maxima)


def _parse_continuous_column(raw: RawDataset, j: int, name: str) -> np.ndarray:
    try:
        return np.array([float(r[j]) for r in raw.rows], dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"continuous column {name!r}: {exc}")


def encode_features(
    raw: RawDataset, schema: DataSchema, stats: Optional[FeatureStats] = None
) -> EncodedData:
    """Encode validated rows into ``(features, labels, groups)``.

    Categorical columns one-hot in schema value order; continuous columns
    min-max scaled with ``stats`` (fit on ``raw`` itself when omitted, so
    training data always lands in [0, 1]). Constant continuous columns are
    emitted as 0.0. Rows whose sensitive value is outside the schema list
    are dropped or mapped to one extra group, per the schema flag.
    """
    if stats is None:
        stats = fit_feature_stats(raw, schema)

    col_index = {c.name: j for j, c in enumerate(schema.columns)}
    sens_j = col_index[schema.sensitive_column.name]
    group_of = {v: g for g, v in enumerate(schema.sensitive_values)}
    extra_group = len(schema.sensitive_values)

    keep: list[int] = []
    groups: list[int] = []
    n_dropped = 0
    for i, row in enumerate(raw.rows):
        g = group_of.get(row[sens_j])
        if g is None:
            if schema.unknown_sensitive == UNKNOWN_SENSITIVE_EXTRA:
                g = extra_group
            else:
                n_dropped += 1
                continue
        keep.append(i)
        groups.append(g)

    label_j = col_index[schema.label_column.name]
    labels = np.array(
        [1 if raw.rows[i][label_j] == schema.positive_label else 0 for i in keep],
        dtype=np.int64,
    )

    blocks: list[np.ndarray] = []
    names: list[str] = []
    n = len(keep)
    for j, col in enumerate(schema.columns):
        if col.kind == KIND_CATEGORICAL:
            block = np.zeros((n, len(col.values)), dtype=np.float64)
            value_pos = {v: k for k, v in enumerate(col.values)}
            for r, i in enumerate(keep):
                block[r, value_pos[raw.rows[i][j]]] = 1.0
            blocks.append(block)
            names.extend(f"{col.name}={v}" for v in col.values)
        elif col.kind == KIND_CONTINUOUS:
            lo, hi = stats.minima[col.name], stats.maxima[col.name]
            vals = np.array([float(raw.rows[i][j]) for i in keep], dtype=np.float64)
            if hi == lo:
                scaled = np.zeros(n, dtype=np.float64)
            else:
                scaled = (vals - lo) / (hi - lo)
            blocks.append(scaled[:, None])
            names.append(col.name)

    features = (
        np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0), dtype=np.float64)
    )
    return EncodedData(
        features=features,
        labels=labels,
        groups=np.array(groups, dtype=np.int64),
        stats=stats,
        feature_names=names,
        n_dropped_sensitive=n_dropped,
    )


@dataclass
class ClientDataset:
    """One client's shard: row-aligned features, binary labels, group ids."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    client_id: int

    def __post_init__(self):
        n = self.features.shape[0]
        if not (len(self.labels) == len(self.groups) == n):
            raise ValueError("features, labels and groups must have equal row counts")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if n and self.groups.min() < 0:
            raise ValueError("group ids must be nonnegative")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray, client_id: Optional[int] = None) -> "ClientDataset":
        return ClientDataset(
            features=self.features[idx],
            labels=self.labels[idx],
            groups=self.groups[idx],
            client_id=self.client_id if client_id is None else client_id,
        )


def partition_clients(
    features: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray,
    n_clients: int,
    strategy: str = "iid",
    seed: int = 0,
) -> list[ClientDataset]:
    """Split rows into ``n_clients`` disjoint shards covering every row.

    Shard sizes differ by at most one; membership (and which shards carry
    the spare rows) is a deterministic function of the seed.
    """
    n = features.shape[0]
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if n < n_clients:
        raise ValueError(f"cannot split {n} rows across {n_clients} clients")
    if strategy != "iid":
        raise ValueError(f"unknown partition strategy {strategy!r}")

    rng = stream(seed, "partition")
    perm = rng.permutation(n)
    base, remainder = divmod(n, n_clients)
    sizes = np.full(n_clients, base, dtype=np.int64)
    sizes[rng.choice(n_clients, size=remainder, replace=False)] += 1

    shards = []
    offset = 0
    for i in range(n_clients):
        idx = np.sort(perm[offset : offset + sizes[i]])
        offset += sizes[i]
        shards.append(
            ClientDataset(
                features=features[idx], labels=labels[idx], groups=groups[idx], client_id=i
            )
        )
    return shards


def batch_iter(
    d: ClientDataset | int, batch_size: int, seed: int | np.random.Generator
) -> Iterator[np.ndarray]:
    """Yield index batches, epoch after epoch, each epoch a fresh seeded shuffle.

    Every index appears exactly once per epoch; the final batch of an epoch
    may be short.
    """
    n = d if isinstance(d, int) else len(d)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "batches")
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start : start + batch_size]


def label_balance(labels: Sequence[int]) -> float:
    """Fraction of positive labels; recorded per shard in run metadata."""
    arr = np.asarray(labels)
    return float(arr.mean()) if arr.size else 0.0

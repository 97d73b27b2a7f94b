"""Synthetic biased tabular data for desk-scale runs and CI.

Two groups with different positive-label base rates; continuous features
carry label signal and a group-dependent shift (so an unconstrained model
can and will learn the bias), plus one noise categorical column to exercise
one-hot encoding. Fully seeded.
"""

from __future__ import annotations

import csv

import numpy as np

from .data import ColumnSpec, DataSchema
from .rngstream import stream

# Per-feature label signal, group shift, and noise scale. x0 carries clean
# label signal, x1/x2 mix label signal with a group shift (the tempting
# biased shortcut), x3 is a near-clean group proxy that lets a constrained
# model cancel the shifts instead of collapsing to a constant predictor.
_LABEL_WEIGHT = (4.0, 1.0, 0.6, 0.0)
_GROUP_SHIFT = (0.0, 2.0, 1.2, 2.2)
_NOISE_SCALE = (0.5, 1.0, 1.0, 0.2)
_NOISE_CATEGORIES = ("low", "mid", "high")


def synth_schema() -> DataSchema:
    cols = [ColumnSpec(f"x{i}", "continuous") for i in range(len(_LABEL_WEIGHT))]
    cols.append(ColumnSpec("segment", "categorical", _NOISE_CATEGORIES))
    cols.append(ColumnSpec("grp", "sensitive"))
    cols.append(ColumnSpec("outcome", "label"))
    return DataSchema(
        columns=tuple(cols),
        positive_label="yes",
        sensitive_values=("g0", "g1"),
    )


def generate_biased_rows(rows: int, bias: float, seed: int) -> list[list[str]]:
    """String rows matching :func:`synth_schema`.

    ``bias`` is the gap between the two groups' positive-label rates,
    centered on one half: group 0 gets 0.5 + bias/2, group 1 gets
    0.5 - bias/2. Even at bias 0 the feature shifts make naive training
    produce group-dependent decisions.
    """
    if rows < 1:
        raise ValueError("rows must be >= 1")
    if not (0.0 <= bias < 1.0):
        raise ValueError(f"bias must be in [0, 1), got {bias}")
    rng = stream(seed, "synth")
    group = (rng.random(rows) < 0.4).astype(np.int64)  # 1 is the smaller group
    if bias == 0.0:
        # exactly half the labels positive within each group: the 0.5
        # decision threshold stays inside the prediction distribution and a
        # perfectly accurate predictor is also perfectly rate-balanced
        label = np.zeros(rows, dtype=np.int64)
        for g in (0, 1):
            idx = np.flatnonzero(group == g)
            label[rng.permutation(idx)[: len(idx) // 2]] = 1
    else:
        p_pos = np.where(group == 0, 0.5 + bias / 2.0, 0.5 - bias / 2.0)
        label = (rng.random(rows) < p_pos).astype(np.int64)
    feats = (
        label[:, None] * np.array(_LABEL_WEIGHT)
        + group[:, None] * np.array(_GROUP_SHIFT)
        + rng.normal(0.0, 1.0, size=(rows, len(_LABEL_WEIGHT))) * np.array(_NOISE_SCALE)
    )
    segment = rng.choice(_NOISE_CATEGORIES, size=rows)

    out = []
    for i in range(rows):
        out.append(
            [f"{v:.6f}" for v in feats[i]]
            + [str(segment[i]), f"g{group[i]}", "yes" if label[i] else "no"]
        )
    return out


def write_synth_csv(path, rows: int, bias: float, seed: int) -> None:
    schema = synth_schema()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in schema.columns])
        writer.writerows(generate_biased_rows(rows, bias, seed))
